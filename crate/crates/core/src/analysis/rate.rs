//! Log-log least-squares fits of a metric against `ε`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum `R²` for a fit to count as conclusive.
pub const CONCLUSIVE_R2: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub conclusive: bool,
}

impl RateFit {
    /// Fits `log M = intercept + slope · log ε`.
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "a rate fit needs at least 3 points, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if !(w[1].0 < w[0].0) {
                return Err(Error::InvalidParameter("epsilons must be strictly decreasing".into()));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0 && p.1.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "rate fit needs positive values, got ({}, {})",
                p.0, p.1
            )));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        // a constant metric is fitted perfectly
        let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
        Ok(RateFit {
            points: points.to_vec(),
            slope,
            intercept,
            r2,
            conclusive: r2 >= CONCLUSIVE_R2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn synthetic_inverse_rate() {
        let f = RateFit::fit(&[(0.1, 10.0), (0.05, 20.0), (0.025, 40.0)]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.conclusive);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RateFit::fit(&[(0.1, 1.0), (0.05, 1.0)]).is_err());
        assert!(RateFit::fit(&[(0.1, 1.0), (0.2, 1.0), (0.05, 1.0)]).is_err());
        assert!(RateFit::fit(&[(0.1, 1.0), (0.05, 0.0), (0.025, 1.0)]).is_err());
    }

    #[test]
    fn constant_metric_has_zero_slope() {
        let f = RateFit::fit(&[(0.1, 3.0), (0.05, 3.0), (0.025, 3.0)]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r2, 1.0);
    }

    proptest! {
        #[test]
        fn recovers_exact_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0, e0 in 0.05f64..0.5) {
            let pts: Vec<(f64, f64)> = (0..4).map(|k| {
                let e = e0 / 2f64.powi(k);
                (e, c * e.powf(p))
            }).collect();
            let f = RateFit::fit(&pts).unwrap();
            prop_assert!((f.slope - p).abs() < 1e-9);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        }
    }
}
