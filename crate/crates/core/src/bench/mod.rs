//! Monte Carlo cross-validation of the estimators and stopping criteria.
//!
//! Two disjoint pools are held out of the index. Every pool query is
//! searched to completion once and every witness-query distance is computed
//! once; each repetition then draws witnesses, training and testing queries,
//! fits a bundle and evaluates it on the testing draw by replaying the
//! recorded searches.

mod measures;
mod report;

use std::ops::ControlFlow;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use measures::{coverage, exact_class_ratio, exact_ratio, mean, median, rmse, time_savings};
pub use report::{
    CalibrationCell, ClassSummary, DatasetSummary, EstimatorCell, PolicyRow, RateCell, Report, RepetitionSummary,
    Scope, SequentialCell, REPORT_FORMAT,
};

use crate::classify::{majority_class, neighbor_labels};
use crate::dataset::{cbf_dataset, random_walk_dataset, sample_pools, Dataset, DatasetDescriptor, PoolSplit};
use crate::error::{Error, Result};
use crate::index::{IndexConfig, IndexKind, IndexTree};
use crate::models::{
    fit_bundle, weighted_witness_distance, EstimationMethod, GuaranteeBundle, IndexFingerprint, TrainConfig,
    TrainingRecord, WitnessSet, WITNESS_EXPONENT,
};
use crate::search::{progressive_knn, SearchConfig, DEFAULT_CHECKPOINTS};
use crate::series::DistanceKind;
use crate::stopping::{replay, QueryOutcome, StoppingPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    RandomWalk {
        n: usize,
        len: usize,
        seed: u64,
    },
    Cbf {
        n: usize,
        len: usize,
        amplitude: f64,
        class_probs: Vec<f64>,
        seed: u64,
    },
    /// A descriptor written by the generators or by hand.
    File { path: PathBuf },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::RandomWalk { n, len, seed } => random_walk_dataset(*n, *len, *seed),
            DatasetSpec::Cbf {
                n,
                len,
                amplitude,
                class_probs,
                seed,
            } => cbf_dataset(*n, *len, *amplitude, class_probs, *seed),
            DatasetSpec::File { path } => DatasetDescriptor::open(path)?.load(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub index: IndexConfig,
    pub k: usize,
    pub distance: DistanceKind,
    pub witness_pool: usize,
    pub query_pool: usize,
    pub witnesses: usize,
    pub training: usize,
    pub testing: usize,
    pub repetitions: usize,
    /// Leaf counts at which the progressive estimators are evaluated.
    pub eval_checkpoints: Vec<u64>,
    /// Leaf counts of the sequential tests whose joint coverage is measured.
    pub sequential_checkpoints: Vec<u64>,
    pub estimators: Vec<EstimationMethod>,
    pub thetas: Vec<f64>,
    pub policies: Vec<StoppingPolicy>,
    pub train: TrainConfig,
    pub seed: u64,
}

/// KDE bandwidth multiplier used by the presets. The normal-reference rule
/// oversmooths the strongly correlated (final, best-so-far) pairs.
pub const DESK_BANDWIDTH_SCALE: f64 = 0.3;

pub const PRESETS: [&str; 6] = ["desk", "desk-nr25", "desk-cbf", "desk-cbf1", "tiny", "tiny-cbf"];

impl BenchConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let policies = |v: &[&str]| v.iter().map(|s| s.parse()).collect::<Result<Vec<StoppingPolicy>>>();
        let base = BenchConfig {
            name: name.to_string(),
            dataset: DatasetSpec::RandomWalk {
                n: 100_000,
                len: 64,
                seed: 1,
            },
            index: IndexConfig::new(IndexKind::Dstree),
            k: 1,
            distance: DistanceKind::Euclidean,
            witness_pool: 500,
            query_pool: 600,
            witnesses: 200,
            training: 100,
            testing: 200,
            repetitions: 20,
            eval_checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            sequential_checkpoints: vec![1, 256, 512, 768, 1024],
            estimators: EstimationMethod::ALL.to_vec(),
            thetas: vec![0.05, 0.01],
            policies: policies(&[
                "none",
                "time:0.05",
                "time:0.01",
                "prob:0.05",
                "prob:0.01",
                "error:0.01:0.05",
                "error:0.05:0.05",
            ])?,
            train: TrainConfig {
                kde_bandwidth_scale: DESK_BANDWIDTH_SCALE,
                ..TrainConfig::default()
            },
            seed: 42,
        };
        let cbf = |amplitude: f64, n: usize| BenchConfig {
            dataset: DatasetSpec::Cbf {
                n,
                len: 128,
                amplitude,
                class_probs: vec![1.0 / 3.0; 3],
                seed: 3,
            },
            k: 10,
            estimators: vec![EstimationMethod::Kde2],
            thetas: vec![0.05],
            policies: policies(&["none", "class:0.05", "class:0.01", "prob:0.05"]).expect("valid policies"),
            ..base.clone()
        };
        Ok(match name {
            "desk" => base,
            // A quarter of the training draw, to show how estimates degrade with fewer records.
            "desk-nr25" => BenchConfig { training: 25, ..base },
            "desk-cbf" => cbf(3.0, 100_000),
            "desk-cbf1" => cbf(1.0, 100_000),
            "tiny" => BenchConfig {
                dataset: DatasetSpec::RandomWalk { n: 4000, len: 64, seed: 1 },
                index: IndexConfig::new(IndexKind::Dstree).with_leaf_threshold(40),
                witness_pool: 60,
                query_pool: 80,
                witnesses: 30,
                training: 40,
                testing: 20,
                repetitions: 3,
                ..base
            },
            "tiny-cbf" => BenchConfig {
                index: IndexConfig::new(IndexKind::Isax).with_leaf_threshold(40),
                witness_pool: 60,
                query_pool: 80,
                witnesses: 30,
                training: 40,
                testing: 20,
                repetitions: 3,
                ..cbf(3.0, 4000)
            },
            _ => {
                return Err(Error::invalid(format!(
                    "unknown preset `{name}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.repetitions == 0 || self.testing == 0 {
            return Err(Error::invalid("k, repetitions and testing must be positive"));
        }
        if self.witnesses > self.witness_pool {
            return Err(Error::invalid("more witnesses than the witness pool holds"));
        }
        if self.training + self.testing > self.query_pool {
            return Err(Error::invalid("training and testing draws do not fit in the query pool"));
        }
        for &t in &self.thetas {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("theta = {t} must lie in (0, 1)")));
            }
        }
        self.policies.iter().try_for_each(StoppingPolicy::validate)
    }

    fn train_config(&self) -> TrainConfig {
        let mut train = self.train.clone();
        train.checkpoints.extend(&self.eval_checkpoints);
        train.checkpoints.extend(&self.sequential_checkpoints);
        train.checkpoints.sort_unstable();
        train.checkpoints.dedup();
        train
    }
}

/// Seed of repetition `r`.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng.next_u64()
}

pub fn run_bench(config: &BenchConfig) -> Result<Report> {
    config.validate()?;
    run_bench_on(config, Arc::new(config.dataset.load()?))
}

struct Shared<'a> {
    config: &'a BenchConfig,
    train: TrainConfig,
    split: PoolSplit,
    tree: IndexTree,
    labels: Option<&'a [u32]>,
    witnesses: WitnessSet,
    records: Vec<TrainingRecord>,
    /// Row-major `query_pool x witness_pool` distances.
    distances: Vec<f64>,
}

/// Runs the protocol on an already loaded dataset.
pub fn run_bench_on(config: &BenchConfig, dataset: Arc<Dataset>) -> Result<Report> {
    config.validate()?;
    let n = dataset.n();
    let split = sample_pools(n, config.witness_pool, config.query_pool, config.seed)?;
    let mut index = config.index.clone();
    index.distance = config.distance;
    let tree = IndexTree::build_subset(dataset.clone(), &split.remainder(n), index)?;

    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), dataset.series(i).to_vec())).collect::<Vec<_>>();
    let witnesses = WitnessSet::compute(&tree, pick(&split.witness_pool), config.k, config.distance)?;
    let search = SearchConfig::new(config.k, config.distance).with_checkpoints(Vec::new());
    let records = split
        .query_pool
        .par_iter()
        .map(|&id| {
            let trace = progressive_knn(&tree, dataset.series(id), &search, |_| ControlFlow::Continue(()))?;
            TrainingRecord::from_trace(&trace, Some(id), f64::NAN)
        })
        .collect::<Result<Vec<_>>>()?;
    let distances = split
        .query_pool
        .par_iter()
        .map(|&q| witnesses.distances_to(dataset.series(q), config.distance))
        .collect::<Result<Vec<_>>>()?
        .concat();

    let shared = Shared {
        config,
        train: config.train_config(),
        split,
        tree,
        labels: dataset.labels(),
        witnesses,
        records,
        distances,
    };
    let reps = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            repetition(&shared, r).map_err(|e| Error::Repetition {
                repetition: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = DatasetSummary {
        n,
        series_len: dataset.series_len(),
        indexed: shared.tree.len(),
        leaves: shared.tree.leaf_count(),
        class_count: dataset.class_count(),
    };
    Ok(report::aggregate(config, summary, reps))
}

/// One interval against its truth.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Measurement {
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
    pub truth: f64,
}

/// Raw results of one repetition, folded into the report in repetition order.
pub(crate) struct RepetitionData {
    pub repetition: usize,
    pub seed: u64,
    pub estimators: Vec<(EstimationMethod, f64, Scope, Vec<Measurement>, usize)>,
    pub sequential: Vec<(EstimationMethod, f64, Vec<bool>)>,
    pub outcomes: Vec<Vec<QueryOutcome>>,
    pub true_classes: Option<Vec<u32>>,
    /// (probability, outcome) pairs for the exact-answer and class models.
    pub calibration: [Vec<(f64, bool)>; 2],
    /// Per evaluation checkpoint: exact flags and exact-class flags.
    pub rates: Vec<(u64, Vec<bool>, Option<Vec<bool>>)>,
}

fn repetition(s: &Shared<'_>, r: usize) -> Result<RepetitionData> {
    let c = s.config;
    let seed = repetition_seed(c.seed, r);
    let draw = s.split.draw(c.witnesses, c.training, c.testing, seed)?;
    let wpos: Vec<usize> = draw
        .witnesses
        .iter()
        .map(|id| s.split.witness_pool.binary_search(id).expect("drawn from the pool"))
        .collect();
    let witnesses = WitnessSet {
        ids: wpos.iter().map(|&w| s.witnesses.ids[w]).collect(),
        series: wpos.iter().map(|&w| s.witnesses.series[w].clone()).collect(),
        knn_distances: wpos.iter().map(|&w| s.witnesses.knn_distances[w]).collect(),
        k: c.k,
    };
    let wp = s.split.witness_pool.len();
    let with_dw = |ids: &[u32]| -> Result<Vec<TrainingRecord>> {
        ids.iter()
            .map(|id| {
                let qi = s.split.query_pool.binary_search(id).expect("drawn from the pool");
                let d: Vec<f64> = wpos.iter().map(|&w| s.distances[qi * wp + w]).collect();
                let mut rec = s.records[qi].clone();
                rec.witness_distance = weighted_witness_distance(&d, &witnesses.knn_distances, WITNESS_EXPONENT)?;
                Ok(rec)
            })
            .collect()
    };
    let training = with_dw(&draw.training)?;
    let testing = with_dw(&draw.testing)?;
    let bundle = fit_bundle(
        &training,
        witnesses,
        IndexFingerprint::of(&s.tree),
        c.distance,
        s.labels,
        &s.train,
    )?;

    let mut estimators = Vec::new();
    for &method in &c.estimators {
        for &theta in &c.thetas {
            match method {
                EstimationMethod::Witness | EstimationMethod::Baseline => {
                    let (m, missing) = measure(&bundle, method, theta, &testing, None);
                    estimators.push((method, theta, Scope::Initial, m, missing));
                }
                _ => {
                    for &t in &c.eval_checkpoints {
                        let (m, missing) = measure(&bundle, method, theta, &testing, Some(t));
                        estimators.push((method, theta, Scope::Leaves(t), m, missing));
                    }
                }
            }
        }
    }

    let mut sequential = Vec::new();
    if !c.sequential_checkpoints.is_empty() {
        for &method in c.estimators.iter().filter(|m| m.sidedness() == crate::stats::Sidedness::LowerOnly) {
            for &theta in &c.thetas {
                let flags = testing
                    .iter()
                    .filter_map(|rec| {
                        c.sequential_checkpoints.iter().try_fold(true, |all, &t| {
                            let m = measure_one(&bundle, method, theta, rec, Some(t))?;
                            Some(all && m.lower <= m.truth && m.truth <= m.upper)
                        })
                    })
                    .collect();
                sequential.push((method, theta, flags));
            }
        }
    }

    let outcomes = c
        .policies
        .iter()
        .map(|p| testing.iter().map(|rec| replay(rec, &bundle, p, s.labels)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;

    let true_classes = s.labels.map(|l| draw.testing.iter().map(|&id| l[id as usize]).collect());

    let mut calibration = [Vec::new(), Vec::new()];
    for rec in &testing {
        for &t in &bundle.moments {
            let Some(bsf) = rec.bsf_at(t) else { continue };
            if let Some(p) = bundle.exact_probability(t, bsf[bsf.len() - 1].distance) {
                calibration[0].push((p, rec.is_exact_at(t)));
            }
            if let Some(labels) = s.labels {
                if let Some(p) = bundle.class_probability(t, bsf, labels) {
                    calibration[1].push((p, class_exact(rec, bsf, labels)?));
                }
            }
        }
    }

    let mut rates = Vec::new();
    for &t in &c.eval_checkpoints {
        let mut exact = Vec::new();
        let mut class = s.labels.map(|_| Vec::new());
        for rec in &testing {
            let Some(bsf) = rec.bsf_at(t) else { continue };
            exact.push(rec.is_exact_at(t));
            if let (Some(labels), Some(v)) = (s.labels, class.as_mut()) {
                v.push(class_exact(rec, bsf, labels)?);
            }
        }
        rates.push((t, exact, class));
    }

    Ok(RepetitionData {
        repetition: r,
        seed,
        estimators,
        sequential,
        outcomes,
        true_classes,
        calibration,
        rates,
    })
}

fn class_exact(rec: &TrainingRecord, bsf: &[crate::search::Neighbor], labels: &[u32]) -> Result<bool> {
    Ok(majority_class(&neighbor_labels(bsf, labels))? == majority_class(&neighbor_labels(&rec.exact, labels))?)
}

/// Interval and truth for one record. `t = None` asks for the initial
/// estimate made before the search starts.
fn measure_one(
    bundle: &GuaranteeBundle,
    method: EstimationMethod,
    theta: f64,
    rec: &TrainingRecord,
    t: Option<u64>,
) -> Option<Measurement> {
    match t {
        None => {
            let e = bundle
                .estimate_distance(method, theta, 0, None, Some(rec.witness_distance))
                .ok()?;
            Some(Measurement {
                lower: e.lower,
                upper: e.upper,
                point: e.point,
                truth: rec.exact_k(),
            })
        }
        Some(t) => {
            let bsf = rec.bsf_k_at(t)?;
            let e = bundle.estimate_distance(method, theta, t, Some(bsf), None).ok()?;
            Some(Measurement {
                lower: e.lower,
                upper: e.upper,
                point: e.point,
                truth: rec.family_target(t)?,
            })
        }
    }
}

/// Measurements over the testing records with a full answer at `t`, and the
/// number of those records for which no model was available.
fn measure(
    bundle: &GuaranteeBundle,
    method: EstimationMethod,
    theta: f64,
    testing: &[TrainingRecord],
    t: Option<u64>,
) -> (Vec<Measurement>, usize) {
    let mut out = Vec::new();
    let mut missing = 0;
    for rec in testing {
        if t.is_some_and(|t| rec.bsf_k_at(t).is_none()) {
            continue;
        }
        match measure_one(bundle, method, theta, rec, t) {
            Some(m) => out.push(m),
            None => missing += 1,
        }
    }
    (out, missing)
}

#[cfg(test)]
mod tests;
