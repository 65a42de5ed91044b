use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_rows, constant_column};
use crate::error::{Error, Result};

const SMOOTHING: f64 = 1e-6;
const MAX_ITERATIONS: usize = 500;
/// Residuals nearest zero considered when polishing onto a vertex.
const POLISH_EXTRA: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub tau: f64,
}

impl QuantileModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

pub fn check_loss(residual: f64, tau: f64) -> f64 {
    if residual < 0.0 {
        (tau - 1.0) * residual
    } else {
        tau * residual
    }
}

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, tau: f64) -> f64 {
    (y - x * beta).iter().map(|&r| check_loss(r, tau)).sum()
}

/// Minimizes the summed check loss. Iteratively reweighted least squares on
/// a smoothed loss gets close; the fit is then moved onto the best nearby
/// vertex (a coefficient vector interpolating `p + 1` observations), where
/// the exact minimum of the piecewise-linear objective lies.
pub fn quantile_fit(xs: &[Vec<f64>], ys: &[f64], tau: f64) -> Result<QuantileModel> {
    let p = check_rows(xs, ys.len())?;
    let n = ys.len();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau = {tau} must lie in (0, 1)")));
    }
    if n < 3 || n < p + 1 {
        return Err(Error::invalid(format!("quantile regression needs at least 3 rows, got {n}")));
    }
    if let Some(predictor) = constant_column(xs, p) {
        return Err(Error::SingularDesign { predictor });
    }
    let cols = p + 1;
    let x = DMatrix::from_fn(n, cols, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] });
    let y = DVector::from_column_slice(ys);

    let colsum: DVector<f64> = x.row_sum().transpose();
    let mut beta = DVector::zeros(cols);
    let mut weights = vec![1.0; n];
    for _ in 0..MAX_ITERATIONS {
        let mut a = DMatrix::zeros(cols, cols);
        let mut b = &colsum * (2.0 * (tau - 0.5));
        for i in 0..n {
            let w = weights[i];
            let row = x.row(i);
            for r in 0..cols {
                b[r] += w * row[r] * y[i];
                for c in 0..cols {
                    a[(r, c)] += w * row[r] * row[c];
                }
            }
        }
        let next = a.lu().solve(&b).ok_or(Error::SingularDesign { predictor: 0 })?;
        let change = (&next - &beta).amax();
        beta = next;
        let resid = &y - &x * &beta;
        for i in 0..n {
            weights[i] = 1.0 / resid[i].abs().max(SMOOTHING);
        }
        if change <= 1e-10 * (1.0 + beta.amax()) {
            break;
        }
    }

    let mut best = objective(&x, &y, &beta, tau);
    for _ in 0..50 {
        let resid = &y - &x * &beta;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(a.cmp(&b)));
        order.truncate((cols + POLISH_EXTRA).min(n));
        let mut improved = false;
        for subset in combinations(order.len(), cols) {
            let rows: Vec<usize> = subset.iter().map(|&s| order[s]).collect();
            if let Some(candidate) = interpolate(&x, &y, &rows) {
                let obj = objective(&x, &y, &candidate, tau);
                if obj < best - 1e-12 * best.abs().max(1.0) {
                    best = obj;
                    beta = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(QuantileModel {
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        tau,
    })
}

/// Coefficients passing exactly through the observations in `rows`.
pub(crate) fn interpolate(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> Option<DVector<f64>> {
    let c = rows.len();
    let a = DMatrix::from_fn(c, c, |i, j| x[(rows[i], j)]);
    let b = DVector::from_fn(c, |i, _| y[rows[i]]);
    let sol = a.lu().solve(&b)?;
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
