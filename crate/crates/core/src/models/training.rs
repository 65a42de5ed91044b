use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::witness::{weighted_witness_distance, WitnessSet, WITNESS_EXPONENT};
use crate::error::{Error, Result};
use crate::index::IndexTree;
use crate::search::{family_corrected, progressive_knn, BsfSnapshot, Neighbor, SearchConfig, SearchTrace};
use crate::series::DistanceKind;

/// Everything the estimators learn from one fully executed query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub query_id: Option<u32>,
    /// Weighted witness distance of the query.
    pub witness_distance: f64,
    pub k: usize,
    pub exact: Vec<Neighbor>,
    pub leaves_to_exact: Vec<u64>,
    pub total_leaves: u64,
    pub improvements: Vec<BsfSnapshot>,
}

impl TrainingRecord {
    pub fn from_trace(trace: &SearchTrace, query_id: Option<u32>, witness_distance: f64) -> Result<Self> {
        let leaves_to_exact = trace
            .leaves_to_exact
            .clone()
            .ok_or_else(|| Error::invalid("training needs a search that ran to completion"))?;
        Ok(Self {
            query_id,
            witness_distance,
            k: trace.k,
            exact: trace.answer.clone(),
            leaves_to_exact,
            total_leaves: trace.total_leaves,
            improvements: trace.improvements.clone(),
        })
    }

    /// Best-so-far set after `t` leaves, once it holds k neighbors.
    pub fn bsf_at(&self, t: u64) -> Option<&[Neighbor]> {
        let idx = self.improvements.partition_point(|s| s.leaves_visited <= t);
        let snap = self.improvements[..idx].last()?;
        (snap.neighbors.len() == self.k).then_some(snap.neighbors.as_slice())
    }

    pub fn bsf_k_at(&self, t: u64) -> Option<f64> {
        self.bsf_at(t).map(|n| n[self.k - 1].distance)
    }

    pub fn exact_k(&self) -> f64 {
        self.exact[self.k - 1].distance
    }

    pub fn exact_distances(&self) -> Vec<f64> {
        self.exact.iter().map(|n| n.distance).collect()
    }

    pub fn leaves_to_exact_k(&self) -> u64 {
        self.leaves_to_exact[self.k - 1]
    }

    pub fn is_exact_at(&self, t: u64) -> bool {
        t >= self.leaves_to_exact_k()
    }

    /// Leaf count and k-th distance of the first full best-so-far answer.
    pub fn first_approximate(&self) -> (u64, f64) {
        let s = self
            .improvements
            .iter()
            .find(|s| s.neighbors.len() == self.k)
            .expect("a completed search holds k neighbors");
        (s.leaves_visited, s.neighbors[self.k - 1].distance)
    }

    /// Estimation target after `t` leaves: the family-corrected k-th distance
    /// (the k-th exact distance itself when k = 1 or when all ranks are exact).
    pub fn family_target(&self, t: u64) -> Option<f64> {
        let bsf: Vec<f64> = self.bsf_at(t)?.iter().map(|n| n.distance).collect();
        Some(family_corrected(&self.exact_distances(), &bsf))
    }
}

/// One complete search per query, in parallel; records keep query order.
pub fn collect_training(
    tree: &IndexTree,
    queries: &[(Option<u32>, Vec<f64>)],
    witnesses: &WitnessSet,
    k: usize,
    distance: DistanceKind,
) -> Result<Vec<TrainingRecord>> {
    if witnesses.k != k {
        return Err(Error::invalid(format!(
            "witnesses were computed for k = {}, training asks for k = {k}",
            witnesses.k
        )));
    }
    let config = SearchConfig::new(k, distance).with_checkpoints(Vec::new());
    queries
        .par_iter()
        .map(|(id, q)| {
            let trace = progressive_knn(tree, q, &config, |_| ControlFlow::Continue(()))?;
            let d = witnesses.distances_to(q, distance)?;
            let dw = weighted_witness_distance(&d, &witnesses.knn_distances, WITNESS_EXPONENT)?;
            TrainingRecord::from_trace(&trace, *id, dw)
        })
        .collect()
}
