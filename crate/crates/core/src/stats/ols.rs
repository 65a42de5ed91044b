use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{check_rows, constant_column};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residual_sigma: f64,
    pub training_count: usize,
    /// `(X'X)^-1` of the design with a leading intercept column, row-major.
    pub xtx_inverse: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    /// Only the lower bound is statistical; the upper bound is left infinite
    /// for the caller to replace with a hard bound.
    LowerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn ols_fit(xs: &[Vec<f64>], ys: &[f64]) -> Result<LinearModel> {
    let p = check_rows(xs, ys.len())?;
    let n = ys.len();
    if n < p + 2 {
        return Err(Error::invalid(format!("least squares with {p} predictors needs at least {} rows, got {n}", p + 2)));
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    if let Some(predictor) = constant_column(xs, p) {
        return Err(Error::SingularDesign { predictor });
    }
    let cols = p + 1;
    let x = DMatrix::from_fn(n, cols, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] });
    let y = DVector::from_column_slice(ys);
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 1..cols {
        let norm = x.column(j).norm();
        if r[(j, j)].abs() <= 1e-10 * norm.max(1e-300) {
            return Err(Error::SingularDesign { predictor: j - 1 });
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign { predictor: 0 })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(cols, cols))
        .ok_or(Error::SingularDesign { predictor: 0 })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let residuals = &y - &x * &beta;
    let sse = residuals.norm_squared();
    let df = (n - p - 1) as f64;
    Ok(LinearModel {
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        residual_sigma: (sse / df).sqrt(),
        training_count: n,
        xtx_inverse: (0..cols).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| xtx_inv[(i, j)]).collect(),
    })
}

impl LinearModel {
    pub fn predictor_count(&self) -> usize {
        self.coefficients.len()
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.training_count - self.predictor_count() - 1
    }

    pub fn predict(&self, x0: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x0).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Standard error of a new observation at `x0`, leverage included.
    pub fn prediction_se(&self, x0: &[f64]) -> f64 {
        let cols = self.predictor_count() + 1;
        let aug: Vec<f64> = std::iter::once(1.0).chain(x0.iter().copied()).collect();
        let mut lev = 0.0;
        for i in 0..cols {
            for j in 0..cols {
                lev += aug[i] * self.xtx_inverse[i * cols + j] * aug[j];
            }
        }
        self.residual_sigma * (1.0 + lev.max(0.0)).sqrt()
    }

    /// Interval from the predictive t distribution with `n - p - 1` degrees of
    /// freedom. Two-sided intervals put `theta / 2` in each tail; lower-only
    /// intervals put all of `theta` below.
    pub fn predict_interval(&self, x0: &[f64], theta: f64, sidedness: Sidedness) -> Result<PredictionInterval> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid(format!("theta = {theta} must lie in (0, 1)")));
        }
        if x0.len() != self.predictor_count() {
            return Err(Error::invalid(format!(
                "model has {} predictors, got {}",
                self.predictor_count(),
                x0.len()
            )));
        }
        let point = self.predict(x0);
        let se = self.prediction_se(x0);
        let t = StudentsT::new(0.0, 1.0, self.degrees_of_freedom() as f64)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(match sidedness {
            Sidedness::TwoSided => {
                let w = if se == 0.0 { 0.0 } else { t.inverse_cdf(1.0 - theta / 2.0) * se };
                PredictionInterval {
                    point,
                    lower: point - w,
                    upper: point + w,
                }
            }
            Sidedness::LowerOnly => {
                let w = if se == 0.0 { 0.0 } else { t.inverse_cdf(1.0 - theta) * se };
                PredictionInterval {
                    point,
                    lower: point - w,
                    upper: f64::INFINITY,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Normal equations solved by Gauss-Jordan elimination.
    fn normal_equations(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        let c = xs[0].len() + 1;
        let mut a = vec![vec![0.0; c + 1]; c];
        for (row, &y) in xs.iter().zip(ys) {
            let aug: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
            for i in 0..c {
                for j in 0..c {
                    a[i][j] += aug[i] * aug[j];
                }
                a[i][c] += aug[i] * y;
            }
        }
        for col in 0..c {
            let piv = (col..c).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..c {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..=c {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..c).map(|i| a[i][c] / a[i][i]).collect()
    }

    #[test]
    fn exact_line() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = ols_fit(&xs, &ys).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.intercept - 1.0).abs() < 1e-12);
        assert!(m.residual_sigma < 1e-12);
        let pi = m.predict_interval(&[3.0], 0.05, Sidedness::TwoSided).unwrap();
        assert!((pi.upper - pi.lower).abs() < 1e-9);
    }

    #[test]
    fn singular_designs_name_the_predictor() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 3.0]).collect();
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(ols_fit(&xs, &ys), Err(Error::SingularDesign { predictor: 1 })));
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(ols_fit(&xs, &ys), Err(Error::SingularDesign { predictor: 1 })));
        assert!(ols_fit(&xs[..2], &ys[..2]).is_err());
    }

    #[test]
    fn matches_normal_equations_and_residuals_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(0.0..10.0)])
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|r| 0.5 + 1.5 * r[0] - 0.25 * r[1] + noise(&mut rng) * 0.3)
            .collect();
        let m = ols_fit(&xs, &ys).unwrap();
        let want = normal_equations(&xs, &ys);
        assert!((m.intercept - want[0]).abs() < 1e-8);
        for j in 0..2 {
            assert!((m.coefficients[j] - want[j + 1]).abs() < 1e-8);
        }
        for j in 0..2 {
            let dot: f64 = xs.iter().zip(&ys).map(|(r, y)| (y - m.predict(r)) * r[j]).sum();
            assert!(dot.abs() < 1e-8, "{dot}");
        }
        let mean_x: Vec<f64> = (0..2).map(|j| xs.iter().map(|r| r[j]).sum::<f64>() / 200.0).collect();
        let mean_y = ys.iter().sum::<f64>() / 200.0;
        assert!((m.predict(&mean_x) - mean_y).abs() < 1e-10);
    }

    #[test]
    fn interval_coverage_by_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let xs: Vec<Vec<f64>> = (0..600).map(|i| vec![i as f64 / 100.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|r| 1.0 + 0.7 * r[0] + noise(&mut rng)).collect();
        let m = ols_fit(&xs, &ys).unwrap();
        let mut inside = 0;
        let mut lower_ok = 0;
        for _ in 0..10_000 {
            let x = rng.random_range(0.0..6.0);
            let y = 1.0 + 0.7 * x + noise(&mut rng);
            let pi = m.predict_interval(&[x], 0.05, Sidedness::TwoSided).unwrap();
            inside += (pi.lower <= y && y <= pi.upper) as usize;
            let lo = m.predict_interval(&[x], 0.05, Sidedness::LowerOnly).unwrap();
            assert!(lo.lower <= lo.point);
            lower_ok += (lo.lower <= y) as usize;
        }
        let cov = inside as f64 / 10_000.0;
        assert!((cov - 0.95).abs() <= 0.02, "two-sided coverage {cov}");
        let cov = lower_ok as f64 / 10_000.0;
        assert!((cov - 0.95).abs() <= 0.02, "one-sided coverage {cov}");
        assert!(m.predict_interval(&[1.0], 0.0, Sidedness::TwoSided).is_err());
        assert!(m.predict_interval(&[1.0], 1.0, Sidedness::TwoSided).is_err());
    }
}
