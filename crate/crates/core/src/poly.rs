//! Exact multivariate polynomials with rational coefficients.
//!
//! Coefficients are kept as [`BigRational`] so that algebra (products,
//! derivatives, affine substitution) is exact; evaluation happens in `f64`
//! from a cached copy of the coefficients. At most three variables are
//! supported, which covers tangential variables in `n <= 3` and the full
//! physical coordinates for coefficient fields.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub const MAX_VARS: usize = 3;
pub const MAX_DEGREE: u32 = 8;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Exponent = [u32; MAX_VARS];

/// Value, gradient and Hessian of a scalar field at a point.
///
/// Only the leading `n x n` block is meaningful; the rest is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec3,
    pub hess: Mat3,
}

impl Jet {
    pub fn constant(value: f64) -> Self {
        Jet {
            value,
            ..Default::default()
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct PolynomialField {
    n_vars: usize,
    terms: BTreeMap<Exponent, BigRational>,
    numeric: Vec<(Exponent, f64)>,
}

impl fmt::Debug for PolynomialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolynomialField({}; {})", self.n_vars, self)
    }
}

impl fmt::Display for PolynomialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (exp, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            first = false;
            let mag = c.abs();
            let mut factors = Vec::new();
            if !mag.is_one() || exp.iter().all(|&e| e == 0) {
                factors.push(format!("{}", mag.to_f64().unwrap_or(f64::NAN)));
            }
            for (k, &e) in exp.iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(format!("x{}", k + 1)),
                    _ => factors.push(format!("x{}^{}", k + 1, e)),
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

fn to_exact(v: f64) -> Result<BigRational> {
    BigRational::from_float(v).ok_or_else(|| Error::NonFinite(format!("coefficient {v}")))
}

impl PolynomialField {
    fn from_map(n_vars: usize, mut terms: BTreeMap<Exponent, BigRational>) -> Self {
        terms.retain(|_, c| !c.is_zero());
        let numeric = terms
            .iter()
            .map(|(e, c)| (*e, c.to_f64().unwrap_or(f64::NAN)))
            .collect();
        PolynomialField {
            n_vars,
            terms,
            numeric,
        }
    }

    pub fn zero(n_vars: usize) -> Self {
        assert!(n_vars <= MAX_VARS, "at most {MAX_VARS} variables");
        Self::from_map(n_vars, BTreeMap::new())
    }

    pub fn constant(n_vars: usize, c: BigRational) -> Self {
        assert!(n_vars <= MAX_VARS, "at most {MAX_VARS} variables");
        let mut m = BTreeMap::new();
        m.insert([0; MAX_VARS], c);
        Self::from_map(n_vars, m)
    }

    /// Constant with the exact binary value of `c`.
    pub fn constant_f64(n_vars: usize, c: f64) -> Result<Self> {
        Ok(Self::constant(n_vars, to_exact(c)?))
    }

    /// The coordinate function `x_{k+1}` (zero-based `k`).
    pub fn var(n_vars: usize, k: usize) -> Self {
        assert!(k < n_vars && n_vars <= MAX_VARS);
        let mut e = [0; MAX_VARS];
        e[k] = 1;
        let mut m = BTreeMap::new();
        m.insert(e, BigRational::one());
        Self::from_map(n_vars, m)
    }

    /// Builds a polynomial from `(exponent, coefficient)` pairs; repeated
    /// exponents are summed.
    pub fn from_terms<I>(n_vars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, BigRational)>,
    {
        if n_vars > MAX_VARS {
            return Err(Error::InvalidParameter(format!(
                "at most {MAX_VARS} variables, got {n_vars}"
            )));
        }
        let mut m: BTreeMap<Exponent, BigRational> = BTreeMap::new();
        for (exp, c) in terms {
            if exp.len() != n_vars {
                return Err(Error::InvalidParameter(format!(
                    "exponent {exp:?} does not have {n_vars} entries"
                )));
            }
            let mut e = [0; MAX_VARS];
            e[..n_vars].copy_from_slice(&exp);
            *m.entry(e).or_insert_with(BigRational::zero) += c;
        }
        let p = Self::from_map(n_vars, m);
        p.check_degree()?;
        Ok(p)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn check_degree(&self) -> Result<()> {
        if self.degree() > MAX_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "total degree {} exceeds {MAX_DEGREE}",
                self.degree()
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|e| e.iter().all(|&k| k == 0))
    }

    /// Number of nonzero terms.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Iterates `(exponent, coefficient)` over nonzero terms; exponents are
    /// truncated to `n_vars` entries.
    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &BigRational)> {
        self.terms.iter().map(|(e, c)| (&e[..self.n_vars], c))
    }

    pub fn coefficient(&self, exp: &[u32]) -> BigRational {
        let mut e = [0; MAX_VARS];
        e[..exp.len()].copy_from_slice(exp);
        self.terms.get(&e).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Same polynomial viewed as a function of more variables.
    pub fn widen(&self, n_vars: usize) -> Self {
        assert!(n_vars >= self.n_vars && n_vars <= MAX_VARS);
        Self::from_map(n_vars, self.terms.clone())
    }

    fn same_vars(&self, other: &Self) -> usize {
        assert_eq!(
            self.n_vars, other.n_vars,
            "polynomials over different variable counts"
        );
        self.n_vars
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.same_vars(other);
        let mut m = self.terms.clone();
        for (e, c) in &other.terms {
            *m.entry(*e).or_insert_with(BigRational::zero) += c;
        }
        Self::from_map(n, m)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        Self::from_map(
            self.n_vars,
            self.terms.iter().map(|(e, c)| (*e, -c)).collect(),
        )
    }

    pub fn scale(&self, s: &BigRational) -> Self {
        Self::from_map(
            self.n_vars,
            self.terms.iter().map(|(e, c)| (*e, c * s)).collect(),
        )
    }

    pub fn scale_f64(&self, s: f64) -> Result<Self> {
        Ok(self.scale(&to_exact(s)?))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.same_vars(other);
        let mut m: BTreeMap<Exponent, BigRational> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let mut e = [0; MAX_VARS];
                for k in 0..MAX_VARS {
                    e[k] = ea[k] + eb[k];
                }
                *m.entry(e).or_insert_with(BigRational::zero) += ca * cb;
            }
        }
        Self::from_map(n, m)
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(self.n_vars, BigRational::one());
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Exact partial derivative with respect to variable `k` (zero-based).
    pub fn derivative(&self, k: usize) -> Self {
        assert!(k < self.n_vars);
        let mut m = BTreeMap::new();
        for (e, c) in &self.terms {
            if e[k] == 0 {
                continue;
            }
            let mut d = *e;
            d[k] -= 1;
            m.insert(d, c * BigRational::from_integer(BigInt::from(e[k])));
        }
        Self::from_map(self.n_vars, m)
    }

    /// Exact substitution `x_k -> scale[k] * y_k + shift[k]`.
    pub fn compose_affine(&self, scale: &[f64], shift: &[f64]) -> Result<Self> {
        let n = self.n_vars;
        if scale.len() != n || shift.len() != n {
            return Err(Error::InvalidParameter(format!(
                "affine map needs {n} scales and shifts"
            )));
        }
        let images: Vec<Self> = (0..n)
            .map(|k| {
                Ok(Self::var(n, k)
                    .scale(&to_exact(scale[k])?)
                    .add(&Self::constant(n, to_exact(shift[k])?)))
            })
            .collect::<Result<_>>()?;
        let mut acc = Self::zero(n);
        for (e, c) in &self.terms {
            let mut term = Self::constant(n, c.clone());
            for k in 0..n {
                if e[k] > 0 {
                    term = term.mul(&images[k].pow(e[k]));
                }
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    /// Evaluation at `x` (only the first `n_vars` entries are read).
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.numeric
            .iter()
            .map(|(e, c)| {
                let mut v = *c;
                for k in 0..self.n_vars {
                    if e[k] > 0 {
                        v *= x[k].powi(e[k] as i32);
                    }
                }
                v
            })
            .sum()
    }

    /// Value, gradient and Hessian at `x`, from the exact term structure.
    pub fn jet(&self, x: &[f64]) -> Jet {
        let n = self.n_vars;
        let mut out = Jet::default();
        // x_k^p for p up to MAX_DEGREE
        let mut pw = [[1.0f64; (MAX_DEGREE + 1) as usize]; MAX_VARS];
        for k in 0..n {
            for p in 1..=MAX_DEGREE as usize {
                pw[k][p] = pw[k][p - 1] * x[k];
            }
        }
        let mono = |e: &Exponent, skip: [u32; MAX_VARS]| -> f64 {
            let mut v = 1.0;
            for k in 0..n {
                v *= pw[k][(e[k] - skip[k]) as usize];
            }
            v
        };
        for (e, c) in &self.numeric {
            out.value += c * mono(e, [0; MAX_VARS]);
            for a in 0..n {
                if e[a] == 0 {
                    continue;
                }
                let mut s = [0; MAX_VARS];
                s[a] = 1;
                out.grad[a] += c * e[a] as f64 * mono(e, s);
                for b in a..n {
                    let mut s2 = s;
                    s2[b] += 1;
                    if e[b] < s2[b] {
                        continue;
                    }
                    let fac = if a == b {
                        (e[a] * (e[a] - 1)) as f64
                    } else {
                        (e[a] * e[b]) as f64
                    };
                    let v = c * fac * mono(e, s2);
                    out.hess[a][b] += v;
                    if a != b {
                        out.hess[b][a] += v;
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Expression parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational, bool),
    Var(usize),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str, n_vars: usize) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        if ch.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match ch {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let int_part = &text[i..j];
                let mut frac_part = "";
                let mut integral = true;
                if j < bytes.len() && bytes[j] == b'.' {
                    integral = false;
                    let k = j + 1;
                    let mut m = k;
                    while m < bytes.len() && bytes[m].is_ascii_digit() {
                        m += 1;
                    }
                    frac_part = &text[k..m];
                    j = m;
                }
                if int_part.is_empty() && frac_part.is_empty() {
                    return Err(Error::Parse {
                        pos: start,
                        msg: "malformed number".into(),
                    });
                }
                let digits = format!("{int_part}{frac_part}");
                let mantissa: BigInt = digits.parse().map_err(|_| Error::Parse {
                    pos: start,
                    msg: "malformed number".into(),
                })?;
                let mut exp10: i64 = -(frac_part.len() as i64);
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    integral = false;
                    let mut m = j + 1;
                    if m < bytes.len() && (bytes[m] == b'+' || bytes[m] == b'-') {
                        m += 1;
                    }
                    let ds = m;
                    while m < bytes.len() && bytes[m].is_ascii_digit() {
                        m += 1;
                    }
                    if ds == m {
                        return Err(Error::Parse {
                            pos: j,
                            msg: "malformed exponent in number".into(),
                        });
                    }
                    let e: i64 = text[j + 1..m].parse().map_err(|_| Error::Parse {
                        pos: j,
                        msg: "malformed exponent in number".into(),
                    })?;
                    exp10 += e;
                    j = m;
                }
                let ten = BigInt::from(10);
                let value = if exp10 >= 0 {
                    BigRational::from_integer(mantissa * num_traits::pow(ten, exp10 as usize))
                } else {
                    BigRational::new(mantissa, num_traits::pow(ten, (-exp10) as usize))
                };
                i = j;
                out.push((start, Tok::Num(value, integral)));
                continue;
            }
            b'x' => {
                let mut j = i + 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let idx: usize = text[i + 1..j].parse().map_err(|_| Error::Parse {
                    pos: start,
                    msg: "expected variable index after 'x'".into(),
                })?;
                if idx == 0 || idx > n_vars {
                    return Err(Error::Parse {
                        pos: start,
                        msg: format!("unknown variable x{idx} (expected x1..x{n_vars})"),
                    });
                }
                i = j;
                out.push((start, Tok::Var(idx - 1)));
                continue;
            }
            _ => {
                let word: String = text[i..]
                    .chars()
                    .take_while(|c| c.is_alphanumeric() || *c == '_')
                    .collect();
                let msg = if word.is_empty() {
                    format!("unexpected character '{}'", &text[i..].chars().next().unwrap())
                } else {
                    format!("unknown variable '{word}'")
                };
                return Err(Error::Parse { pos: start, msg });
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    at: usize,
    end: usize,
    n_vars: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expr(&mut self) -> Result<PolynomialField> {
        // leading sign only
        let mut acc = match self.peek() {
            Some(Tok::Minus) => {
                self.at += 1;
                self.term()?.neg()
            }
            Some(Tok::Plus) => {
                self.at += 1;
                self.term()?
            }
            _ => self.term()?,
        };
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.at += 1;
                    acc = acc.add(&self.term()?);
                }
                Some(Tok::Minus) => {
                    self.at += 1;
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<PolynomialField> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.at += 1;
                    acc = acc.mul(&self.factor()?);
                }
                Some(Tok::Slash) => {
                    self.at += 1;
                    let pos = self.pos();
                    let d = self.factor()?;
                    if !d.is_constant() {
                        return Err(Error::Parse {
                            pos,
                            msg: "division only by a constant".into(),
                        });
                    }
                    let c = d.coefficient(&vec![0; self.n_vars]);
                    if c.is_zero() {
                        return Err(Error::Parse {
                            pos,
                            msg: "division by zero".into(),
                        });
                    }
                    acc = acc.scale(&c.recip());
                }
                _ => break,
            }
            if acc.degree() > MAX_DEGREE {
                return self.err(format!("total degree exceeds {MAX_DEGREE}"));
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<PolynomialField> {
        let mut base = match self.peek().cloned() {
            Some(Tok::Num(v, _)) => {
                self.at += 1;
                PolynomialField::constant(self.n_vars, v)
            }
            Some(Tok::Var(k)) => {
                self.at += 1;
                PolynomialField::var(self.n_vars, k)
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.at += 1;
                inner
            }
            Some(_) => return self.err("expected number, variable or '('"),
            None => return self.err("unexpected end of expression"),
        };
        while self.peek() == Some(&Tok::Caret) {
            self.at += 1;
            let k = match self.peek().cloned() {
                Some(Tok::Num(v, true)) => v,
                Some(Tok::Num(_, false)) => return self.err("exponent must be a non-negative integer"),
                _ => return self.err("expected integer exponent"),
            };
            let pos = self.pos();
            self.at += 1;
            let k = k.to_integer().to_u32().filter(|&k| k <= MAX_DEGREE);
            let Some(k) = k else {
                return Err(Error::Parse {
                    pos,
                    msg: format!("exponent exceeds {MAX_DEGREE}"),
                });
            };
            base = base.pow(k);
            if base.degree() > MAX_DEGREE {
                return Err(Error::Parse {
                    pos,
                    msg: format!("total degree exceeds {MAX_DEGREE}"),
                });
            }
        }
        Ok(base)
    }
}

/// Parses a polynomial expression over `x1..x{n_vars}`.
///
/// Grammar (whitespace-insensitive):
/// `expr := ['+'|'-'] term (('+'|'-') term)*`,
/// `term := factor (('*'|'/') factor)*` (division by constants only),
/// `factor := number | var | factor '^' int | '(' expr ')'`.
/// Numbers are decimal literals, read exactly as rationals.
pub fn parse_expression(text: &str, n_vars: usize) -> Result<PolynomialField> {
    if n_vars == 0 || n_vars > MAX_VARS {
        return Err(Error::InvalidParameter(format!(
            "variable count must be 1..={MAX_VARS}"
        )));
    }
    let toks = lex(text, n_vars)?;
    if toks.is_empty() {
        return Err(Error::Parse {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks: &toks,
        at: 0,
        end: text.len(),
        n_vars,
    };
    let poly = p.expr()?;
    if p.at != toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(poly)
}
