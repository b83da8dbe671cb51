//! Report files: pretty JSON and the nodal field CSV.

use std::fs;
use std::path::Path;

use narrowgap::analysis::SolvedCase;
use narrowgap::mesh_solver::ColumnKind;
use serde::Serialize;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Pretty JSON with a trailing newline.
pub fn json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, json_string(value)).map_err(|e| io_err(path, e))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per node inside the solve ball: `x1..xn, t, u_1..u_N, grad_norm`.
pub fn write_field_csv(path: &Path, case: &SolvedCase) -> Result<(), CliError> {
    let grid = &case.grid;
    let n = grid.n();
    let ncomp = case.u.ncomp;
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    header.push("t".into());
    header.extend((1..=ncomp).map(|l| format!("u_{l}")));
    header.push("grad_norm".into());
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let mut row = Vec::with_capacity(header.len());
    for col in 0..grid.ncols() {
        if grid.columns[col].kind == ColumnKind::Outside {
            continue;
        }
        for it in 0..grid.nt {
            let node = grid.node(col, it);
            row.clear();
            row.extend(grid.physical(col, it).into_iter().map(num));
            row.push(num(grid.t(it)));
            row.extend((0..ncomp).map(|l| num(case.u.value(node, l))));
            row.push(num(case.grad_u.norm(node)));
            w.write_record(&row).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}
