//! k-NN classification on top of progressive search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexTree;
use crate::models::GuaranteeBundle;
use crate::search::Neighbor;
use crate::stopping::{run_with_policy, QueryOutcome, RunOptions, StoppingPolicy};

/// Most frequent label; ties go to the smallest class id.
pub fn majority_class(labels: &[u32]) -> Result<u32> {
    majority(labels).map(|(c, _)| c)
}

fn majority(labels: &[u32]) -> Result<(u32, usize)> {
    if labels.is_empty() {
        return Err(Error::invalid("majority of an empty label set"));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut best = (sorted[0], 0);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].partition_point(|&c| c == sorted[i]) + i;
        if j - i > best.1 {
            best = (sorted[i], j - i);
        }
        i = j;
    }
    Ok(best)
}

/// Agreement of the k answers on the majority class, `(n_major - 1) / (k - 1)`,
/// together with that class. Undefined for k = 1.
pub fn agreement(labels: &[u32]) -> Result<(f64, u32)> {
    if labels.len() < 2 {
        return Err(Error::invalid("agreement needs at least two answers"));
    }
    let (class, count) = majority(labels)?;
    Ok(((count - 1) as f64 / (labels.len() - 1) as f64, class))
}

pub fn neighbor_labels(neighbors: &[Neighbor], labels: &[u32]) -> Vec<u32> {
    neighbors.iter().map(|n| labels[n.id as usize]).collect()
}

/// Early-stopped accuracy relative to the exact classifier's accuracy.
pub fn accuracy_ratio(stopped_accuracy: f64, exact_accuracy: f64) -> Result<f64> {
    if !(exact_accuracy > 0.0) {
        return Err(Error::invalid("accuracy ratio needs a positive exact accuracy"));
    }
    Ok(stopped_accuracy / exact_accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub predicted: u32,
    pub exact_class: Option<u32>,
    pub true_class: Option<u32>,
    pub stopped_at: Option<u64>,
    pub leaves_visited: u64,
    pub savings: Option<f64>,
}

impl ClassificationOutcome {
    pub fn from_outcome(outcome: &QueryOutcome, true_class: Option<u32>) -> Result<Self> {
        Ok(Self {
            predicted: outcome
                .predicted_class
                .ok_or_else(|| Error::invalid("the outcome carries no class"))?,
            exact_class: outcome.exact_class,
            true_class,
            stopped_at: outcome.stopped_at,
            leaves_visited: outcome.leaves_visited,
            savings: outcome.savings,
        })
    }

    pub fn is_exact_class(&self) -> Option<bool> {
        self.exact_class.map(|c| c == self.predicted)
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.true_class.map(|c| c == self.predicted)
    }
}

/// Classifies `query` by majority vote over a progressive k-NN search
/// stopped by `policy`. `labels` are the indexed dataset's labels; with
/// `audit` the search also runs to completion to find the exact class.
pub fn classify_progressive(
    tree: &IndexTree,
    bundle: &GuaranteeBundle,
    query: &[f64],
    policy: &StoppingPolicy,
    labels: &[u32],
    true_class: Option<u32>,
    audit: bool,
) -> Result<ClassificationOutcome> {
    let options = RunOptions {
        audit,
        labels: Some(labels),
        ..RunOptions::default()
    };
    let outcome = run_with_policy(tree, bundle, query, policy, &options)?;
    ClassificationOutcome::from_outcome(&outcome, true_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_examples() {
        assert_eq!(majority_class(&[0, 0, 1]).unwrap(), 0);
        assert_eq!(majority_class(&[2, 1]).unwrap(), 1);
        assert_eq!(majority_class(&[7]).unwrap(), 7);
        assert_eq!(majority_class(&[3, 1, 3, 1, 2]).unwrap(), 1);
        assert!(majority_class(&[]).is_err());
    }

    #[test]
    fn agreement_examples() {
        assert_eq!(agreement(&[1, 1, 1, 0, 2]).unwrap(), (0.5, 1));
        assert_eq!(agreement(&[4, 4, 4]).unwrap(), (1.0, 4));
        assert_eq!(agreement(&[2, 0, 1]).unwrap(), (0.0, 0));
        assert!(agreement(&[1]).is_err());
    }

    #[test]
    fn accuracy_ratio_examples() {
        assert_eq!(accuracy_ratio(0.7, 0.7).unwrap(), 1.0);
        assert!((accuracy_ratio(0.72, 0.70).unwrap() - 1.0285714).abs() < 1e-6);
        assert_eq!(accuracy_ratio(0.0, 0.5).unwrap(), 0.0);
        assert!(accuracy_ratio(0.5, 0.0).is_err());
    }
}
