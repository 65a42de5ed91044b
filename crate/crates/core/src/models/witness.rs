use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexTree;
use crate::search::{progressive_knn, SearchConfig};
use crate::series::DistanceKind;
use crate::stats::{empirical_quantile, sorted_quantile};

pub const WITNESS_EXPONENT: f64 = 5.0;

/// Witness series with their exact k-th nearest neighbor distances in the
/// indexed collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSet {
    pub ids: Vec<Option<u32>>,
    pub series: Vec<Vec<f64>>,
    pub knn_distances: Vec<f64>,
    pub k: usize,
}

impl WitnessSet {
    /// Runs an exact search for each witness.
    pub fn compute(tree: &IndexTree, series: Vec<(Option<u32>, Vec<f64>)>, k: usize, distance: DistanceKind) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::invalid("a witness set needs at least one witness"));
        }
        let config = SearchConfig::new(k, distance).with_checkpoints(Vec::new());
        let knn_distances = series
            .par_iter()
            .map(|(_, s)| {
                let trace = progressive_knn(tree, s, &config, |_| ControlFlow::Continue(()))?;
                Ok(trace.answer[k - 1].distance)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (ids, series) = series.into_iter().unzip();
        Ok(Self {
            ids,
            series,
            knn_distances,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn distances_to(&self, query: &[f64], distance: DistanceKind) -> Result<Vec<f64>> {
        self.series.iter().map(|w| distance.distance(query, w)).collect()
    }
}

/// Normalized weights `d_j^-exp / sum_i d_i^-exp`, computed in log space.
/// Every distance must be positive.
pub fn witness_weights(distances: &[f64], exponent: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = distances
        .iter()
        .map(|&d| (-exponent * (d.ln() - min.ln())).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted witness distance from precomputed query-witness distances. A
/// zero distance returns that witness's own neighbor distance.
pub fn weighted_witness_distance(distances: &[f64], knn: &[f64], exponent: f64) -> Result<f64> {
    if distances.is_empty() || distances.len() != knn.len() {
        return Err(Error::invalid("witness distances and neighbor distances must align and be non-empty"));
    }
    if let Some(j) = distances.iter().position(|&d| d == 0.0) {
        return Ok(knn[j]);
    }
    if distances.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::invalid("witness distances must be finite"));
    }
    Ok(witness_weights(distances, exponent)
        .iter()
        .zip(knn)
        .map(|(w, d)| w * d)
        .sum())
}

pub fn witness_weighted_distance(query: &[f64], witnesses: &WitnessSet, distance: DistanceKind, exponent: f64) -> Result<f64> {
    let d = witnesses.distances_to(query, distance)?;
    weighted_witness_distance(&d, &witnesses.knn_distances, exponent)
}

/// Query-agnostic estimator: the empirical distribution of witness neighbor
/// distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    /// Ascending.
    pub distances: Vec<f64>,
}

pub const MIN_BASELINE_WITNESSES: usize = 10;

pub fn fit_baseline(witnesses: &WitnessSet) -> Result<Baseline> {
    if witnesses.len() < MIN_BASELINE_WITNESSES {
        return Err(Error::invalid(format!(
            "the baseline needs at least {MIN_BASELINE_WITNESSES} witnesses, got {}",
            witnesses.len()
        )));
    }
    let mut distances = witnesses.knn_distances.clone();
    distances.sort_by(f64::total_cmp);
    Ok(Baseline { distances })
}

impl Baseline {
    pub fn mean(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }

    /// Two-sided interval between the `theta / 2` and `1 - theta / 2` quantiles.
    pub fn interval(&self, theta: f64) -> Result<(f64, f64)> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid(format!("theta = {theta} must lie in (0, 1)")));
        }
        Ok((
            sorted_quantile(&self.distances, theta / 2.0),
            sorted_quantile(&self.distances, 1.0 - theta / 2.0),
        ))
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        empirical_quantile(&self.distances, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(knn: Vec<f64>) -> WitnessSet {
        WitnessSet {
            ids: vec![None; knn.len()],
            series: vec![vec![0.0, 1.0]; knn.len()],
            knn_distances: knn,
            k: 1,
        }
    }

    #[test]
    fn weights_examples() {
        let w = witness_weights(&[1.0, 2.0], 5.0);
        assert!((w[0] - 32.0 / 33.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 33.0).abs() < 1e-12);
        let w = witness_weights(&[0.7; 4], 5.0);
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let d = weighted_witness_distance(&[3.0, 3.0], &[2.0, 4.0], 5.0).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        let d = weighted_witness_distance(&[1.5, 1.5, 1.5], &[1.0, 2.0, 6.0], 5.0).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_distance_returns_that_witness() {
        assert_eq!(weighted_witness_distance(&[2.0, 0.0, 1.0], &[5.0, 7.0, 9.0], 5.0).unwrap(), 7.0);
        assert!(weighted_witness_distance(&[], &[], 5.0).is_err());
    }

    #[test]
    fn weights_are_positive_and_sum_to_one_even_for_extreme_ratios() {
        let w = witness_weights(&[1e-8, 1.0, 1e4], 5.0);
        assert!(w.iter().all(|&x| x > 0.0 || x == 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let w = witness_weights(&[0.5, 0.6, 0.7], 5.0);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn baseline_intervals() {
        let b = fit_baseline(&set(vec![2.5; 12])).unwrap();
        assert_eq!(b.interval(0.05).unwrap(), (2.5, 2.5));
        let b = fit_baseline(&set((1..=41).map(f64::from).collect())).unwrap();
        assert_eq!(b.interval(0.05).unwrap(), (2.0, 40.0));
        assert!(fit_baseline(&set(vec![1.0; 9])).is_err());
    }
}
