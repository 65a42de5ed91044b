//! Fitting primitives used by the guarantee models: least squares with
//! prediction intervals, logistic regression, quantile regression, Gaussian
//! kernel density grids and empirical quantiles.

mod kde;
mod logistic;
mod ols;
mod quantile;

pub use kde::{kde_fit, normal_reference_bandwidth, Conditional, GridAxis, GridSpec, KdeGrid, KdeWarning};
pub use logistic::{logistic_fit, LogisticModel, LOGISTIC_RIDGE};
pub use ols::{ols_fit, LinearModel, PredictionInterval, Sidedness};
pub use quantile::{check_loss, quantile_fit, QuantileModel};

use crate::error::{Error, Result};

/// Linearly interpolated order-statistic quantile (the common "type 7" rule).
pub fn empirical_quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&sorted, q))
}

pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn check_rows(xs: &[Vec<f64>], ys: usize) -> Result<usize> {
    if xs.len() != ys {
        return Err(Error::invalid(format!("{} predictor rows but {ys} responses", xs.len())));
    }
    let p = xs.first().map_or(0, Vec::len);
    if xs.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("predictor rows have different lengths"));
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite predictor value"));
    }
    Ok(p)
}

/// First predictor column with no spread, if any.
pub(crate) fn constant_column(xs: &[Vec<f64>], p: usize) -> Option<usize> {
    (0..p).find(|&j| xs.iter().all(|r| r[j] == xs[0][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantile_examples() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&s, 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&s, 1.0).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[4.0, 1.0], 0.25).unwrap(), 1.75);
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&s, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn quantile_matches_sort_and_index(mut v in prop::collection::vec(-100i32..100, 1..60), q in 0.0f64..=1.0) {
            let xs: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let got = empirical_quantile(&xs, q).unwrap();
            v.sort();
            let pos = q * (v.len() - 1) as f64;
            let (i, frac) = (pos as usize, pos - (pos as usize) as f64);
            let want = if i + 1 < v.len() { v[i] as f64 * (1.0 - frac) + v[i + 1] as f64 * frac } else { v[i] as f64 };
            prop_assert!((got - want).abs() < 1e-9);
            prop_assert!(got >= v[0] as f64 && got <= v[v.len() - 1] as f64);
        }
    }
}
