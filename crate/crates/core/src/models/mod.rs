//! Trained guarantee models and the bundle that carries them.
//!
//! A bundle is fit from complete training searches plus a witness set. At
//! query time it turns the current best-so-far answer into distance
//! estimates with one-sided lower bounds, a probability that the answer is
//! already exact, a leaf budget that holds the exact answer with a given
//! confidence, and (for labeled data) a probability that the current
//! majority class is the exact one.

mod training;
mod witness;

use serde::{Deserialize, Serialize};

pub use training::{collect_training, TrainingRecord};
pub use witness::{
    fit_baseline, weighted_witness_distance, witness_weighted_distance, witness_weights, Baseline, WitnessSet,
    MIN_BASELINE_WITNESSES, WITNESS_EXPONENT,
};

use crate::classify::{agreement, majority_class, neighbor_labels};
use crate::error::{Error, Result};
use crate::index::{IndexKind, IndexTree};
use crate::search::{Neighbor, DEFAULT_CHECKPOINTS};
use crate::series::DistanceKind;
use crate::stats::{
    kde_fit, logistic_fit, ols_fit, quantile_fit, Conditional, GridSpec, KdeGrid, LinearModel, LogisticModel,
    QuantileModel, Sidedness,
};
use crate::stopping::plan_moments;

pub const BUNDLE_FORMAT: &str = "pros-models-1";

/// Fewest records with a full answer needed to fit a per-checkpoint model.
pub const MIN_CHECKPOINT_ROWS: usize = 10;
pub const MIN_WITNESS_MODEL_ROWS: usize = 10;
pub const MIN_TIME_BOUND_ROWS: usize = 20;
/// Lower bounds are clamped to at least this value.
pub const LOWER_BOUND_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    Linear,
    Kde2,
    Kde3,
    Witness,
    Baseline,
}

impl EstimationMethod {
    pub const ALL: [EstimationMethod; 5] = [
        EstimationMethod::Linear,
        EstimationMethod::Kde2,
        EstimationMethod::Kde3,
        EstimationMethod::Witness,
        EstimationMethod::Baseline,
    ];

    /// Whether the interval has a statistical upper bound (the initial
    /// estimators) or uses the best-so-far distance as a hard upper bound.
    pub fn sidedness(self) -> Sidedness {
        match self {
            EstimationMethod::Witness | EstimationMethod::Baseline => Sidedness::TwoSided,
            _ => Sidedness::LowerOnly,
        }
    }
}

impl std::fmt::Display for EstimationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimationMethod::Linear => "linear",
            EstimationMethod::Kde2 => "kde2",
            EstimationMethod::Kde3 => "kde3",
            EstimationMethod::Witness => "witness",
            EstimationMethod::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for EstimationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimationMethod::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown estimation method `{s}`")))
    }
}

/// Probability model at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbabilityModel {
    Fitted { model: LogisticModel },
    /// Only one outcome occurred in training; the probability is its rate.
    Pinned { probability: f64 },
    Absent,
}

impl ProbabilityModel {
    fn fit(features: &[Vec<f64>], labels: &[bool]) -> Self {
        if features.len() < MIN_CHECKPOINT_ROWS {
            return ProbabilityModel::Absent;
        }
        let positive = labels.iter().filter(|&&l| l).count();
        let rate = positive as f64 / labels.len() as f64;
        if positive == 0 || positive == labels.len() {
            return ProbabilityModel::Pinned { probability: rate };
        }
        match logistic_fit(features, labels) {
            Ok(model) => ProbabilityModel::Fitted { model },
            Err(_) => ProbabilityModel::Pinned { probability: rate },
        }
    }

    pub fn predict(&self, x: &[f64]) -> Option<f64> {
        match self {
            ProbabilityModel::Fitted { model } => Some(model.predict(x)),
            ProbabilityModel::Pinned { probability } => Some(*probability),
            ProbabilityModel::Absent => None,
        }
    }

    pub fn is_absent(&self) -> bool {
        matches!(self, ProbabilityModel::Absent)
    }
}

/// Quantile regression of `log2(leaves to the exact answer)` on the first
/// approximate k-th distance, at level `1 - phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBound {
    pub phi: f64,
    pub model: QuantileModel,
}

impl TimeBound {
    /// Leaf budget, rounded up to a whole leaf.
    pub fn leaves(&self, first_distance: f64) -> u64 {
        let v = self.model.predict(&[first_distance]).exp2().ceil();
        if v.is_finite() {
            v.max(1.0) as u64
        } else {
            u64::MAX
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class_count: usize,
    /// Whether the current class enters as one-hot predictors.
    pub one_hot: bool,
    pub per_checkpoint: Vec<ProbabilityModel>,
}

impl ClassModel {
    /// Predictors: k-th distance, agreement (k > 1), then one-hot of the
    /// current class without class 0.
    pub fn features(&self, bsf: &[Neighbor], labels: &[u32]) -> Vec<f64> {
        let current = neighbor_labels(bsf, labels);
        let mut x = vec![bsf[bsf.len() - 1].distance];
        let class = if current.len() > 1 {
            let (a, c) = agreement(&current).expect("k > 1");
            x.push(a);
            c
        } else {
            current[0]
        };
        if self.one_hot {
            x.extend((1..self.class_count as u32).map(|c| f64::from(u8::from(c == class))));
        }
        x
    }
}

/// Identifies the index a bundle was trained for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexFingerprint {
    pub kind: IndexKind,
    pub indexed: usize,
    pub series_len: usize,
    pub segments: usize,
    pub leaf_threshold: usize,
}

impl IndexFingerprint {
    pub fn of(tree: &IndexTree) -> Self {
        Self {
            kind: tree.config().kind,
            indexed: tree.len(),
            series_len: tree.layout().series_length(),
            segments: tree.layout().segment_count(),
            leaf_threshold: tree.config().leaf_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Checkpoints that always get models, in addition to the planned moments.
    pub checkpoints: Vec<u64>,
    /// Number of uniform decision moments planned from the training searches.
    pub moments: usize,
    pub time_bound_phis: Vec<f64>,
    pub kde_bandwidth_scale: f64,
    pub fit_kde3: bool,
    /// Largest class count for which the current class is a predictor.
    pub one_hot_max_classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            moments: 16,
            time_bound_phis: vec![0.05, 0.01],
            kde_bandwidth_scale: 1.0,
            fit_kde3: true,
            one_hot_max_classes: 10,
        }
    }
}

/// Point estimate of the k-th neighbor distance with its interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Checkpoint whose model produced the estimate, for the per-checkpoint methods.
    pub checkpoint: Option<u64>,
}

impl DistanceEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, d: f64) -> bool {
        self.lower <= d && d <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeBundle {
    pub format: String,
    pub k: usize,
    pub distance: DistanceKind,
    pub index: IndexFingerprint,
    /// Ascending leaf counts with per-checkpoint models.
    pub checkpoints: Vec<u64>,
    /// Decision moments for the sequential stopping criteria.
    pub moments: Vec<u64>,
    pub training_count: usize,
    pub witnesses: WitnessSet,
    pub baseline: Option<Baseline>,
    pub witness_model: Option<LinearModel>,
    pub linear: Vec<Option<LinearModel>>,
    pub kde2: Vec<Option<KdeGrid>>,
    pub kde3: Option<KdeGrid>,
    pub exact_probability: Vec<ProbabilityModel>,
    pub time_bounds: Vec<TimeBound>,
    pub class_model: Option<ClassModel>,
}

/// Fits every model from complete training searches. `labels` enables the
/// class model.
pub fn fit_bundle(
    records: &[TrainingRecord],
    witnesses: WitnessSet,
    index: IndexFingerprint,
    distance: DistanceKind,
    labels: Option<&[u32]>,
    config: &TrainConfig,
) -> Result<GuaranteeBundle> {
    let Some(first) = records.first() else {
        return Err(Error::invalid("training needs at least one record"));
    };
    let k = first.k;
    if records.iter().any(|r| r.k != k) || witnesses.k != k {
        return Err(Error::invalid("records and witnesses disagree on k"));
    }
    let t_max = records.iter().map(TrainingRecord::leaves_to_exact_k).max().unwrap_or(1);
    let moments = plan_moments(t_max, config.moments)?;
    let mut checkpoints: Vec<u64> = config.checkpoints.iter().chain(&moments).copied().collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let baseline = fit_baseline(&witnesses).ok();
    let witness_model = if records.len() >= MIN_WITNESS_MODEL_ROWS {
        let xs: Vec<Vec<f64>> = records.iter().map(|r| vec![r.witness_distance]).collect();
        let ys: Vec<f64> = records.iter().map(TrainingRecord::exact_k).collect();
        ols_fit(&xs, &ys).ok()
    } else {
        None
    };

    let grid2 = GridSpec::two_d().with_scale(config.kde_bandwidth_scale);
    let mut linear = Vec::with_capacity(checkpoints.len());
    let mut kde2 = Vec::with_capacity(checkpoints.len());
    let mut exact_probability = Vec::with_capacity(checkpoints.len());
    let mut kde3_points = Vec::new();
    for &t in &checkpoints {
        let rows: Vec<(f64, f64, bool)> = records
            .iter()
            .filter_map(|r| Some((r.family_target(t)?, r.bsf_k_at(t)?, r.is_exact_at(t))))
            .collect();
        kde3_points.extend(rows.iter().map(|&(x, y, _)| vec![x, y, (t as f64).log2()]));
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let exact: Vec<bool> = rows.iter().map(|r| r.2).collect();
        exact_probability.push(ProbabilityModel::fit(&xs, &exact));
        if rows.len() < MIN_CHECKPOINT_ROWS {
            linear.push(None);
            kde2.push(None);
            continue;
        }
        linear.push(ols_fit(&xs, &ys).ok());
        let pts: Vec<Vec<f64>> = rows.iter().map(|&(x, y, _)| vec![x, y]).collect();
        kde2.push(kde_fit(&pts, &grid2).ok());
    }
    let kde3 = if config.fit_kde3 && kde3_points.len() >= MIN_CHECKPOINT_ROWS {
        kde_fit(&kde3_points, &GridSpec::three_d().with_scale(config.kde_bandwidth_scale)).ok()
    } else {
        None
    };

    let mut time_bounds = Vec::new();
    if records.len() >= MIN_TIME_BOUND_ROWS {
        let xs: Vec<Vec<f64>> = records.iter().map(|r| vec![r.first_approximate().1]).collect();
        let ys: Vec<f64> = records.iter().map(|r| (r.leaves_to_exact_k() as f64).log2()).collect();
        for &phi in &config.time_bound_phis {
            if !(phi > 0.0 && phi < 1.0) {
                return Err(Error::invalid(format!("phi = {phi} must lie in (0, 1)")));
            }
            if let Ok(model) = quantile_fit(&xs, &ys, 1.0 - phi) {
                time_bounds.push(TimeBound { phi, model });
            }
        }
    }

    let class_model = match labels {
        Some(labels) => Some(fit_class_model(records, &checkpoints, labels, config)?),
        None => None,
    };

    Ok(GuaranteeBundle {
        format: BUNDLE_FORMAT.to_string(),
        k,
        distance,
        index,
        checkpoints,
        moments,
        training_count: records.len(),
        witnesses,
        baseline,
        witness_model,
        linear,
        kde2,
        kde3,
        exact_probability,
        time_bounds,
        class_model,
    })
}

fn fit_class_model(
    records: &[TrainingRecord],
    checkpoints: &[u64],
    labels: &[u32],
    config: &TrainConfig,
) -> Result<ClassModel> {
    let class_count = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    if class_count < 2 {
        return Err(Error::invalid("classification needs at least two classes"));
    }
    let mut model = ClassModel {
        class_count,
        one_hot: class_count <= config.one_hot_max_classes,
        per_checkpoint: Vec::new(),
    };
    for &t in checkpoints {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in records {
            let Some(bsf) = r.bsf_at(t) else { continue };
            let exact_class = majority_class(&neighbor_labels(&r.exact, labels))?;
            let current = majority_class(&neighbor_labels(bsf, labels))?;
            xs.push(model.features(bsf, labels));
            ys.push(current == exact_class);
        }
        let fitted = ProbabilityModel::fit(&xs, &ys);
        model.per_checkpoint.push(fitted);
    }
    Ok(model)
}

impl GuaranteeBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let bundle: GuaranteeBundle = serde_json::from_str(s)?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(Error::BundleMismatch(format!(
                "unsupported bundle format `{}` (expected {BUNDLE_FORMAT})",
                bundle.format
            )));
        }
        let n = bundle.checkpoints.len();
        if bundle.linear.len() != n || bundle.kde2.len() != n || bundle.exact_probability.len() != n {
            return Err(Error::BundleMismatch("per-checkpoint model lists do not match the schedule".into()));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fails unless the bundle was trained for this index, k and distance.
    pub fn check_compatible(&self, tree: &IndexTree, k: usize, distance: DistanceKind) -> Result<()> {
        if self.k != k {
            return Err(Error::BundleMismatch(format!("bundle was trained for k = {}, query uses k = {k}", self.k)));
        }
        if self.distance != distance {
            return Err(Error::BundleMismatch(format!(
                "bundle was trained for distance {}, query uses {distance}",
                self.distance
            )));
        }
        let fp = IndexFingerprint::of(tree);
        if self.index != fp {
            return Err(Error::BundleMismatch(format!(
                "bundle was trained on a different index ({:?} vs {:?})",
                self.index, fp
            )));
        }
        Ok(())
    }

    /// Position of the latest checkpoint at or before `t` for which `has`
    /// holds.
    fn checkpoint_for(&self, t: u64, has: impl Fn(usize) -> bool) -> Option<usize> {
        let end = self.checkpoints.partition_point(|&c| c <= t);
        (0..end).rev().find(|&i| has(i))
    }

    pub fn weighted_witness_distance(&self, query: &[f64]) -> Result<f64> {
        witness_weighted_distance(query, &self.witnesses, self.distance, WITNESS_EXPONENT)
    }

    /// Distance estimate at confidence `1 - theta`. The per-checkpoint methods
    /// need the current k-th best-so-far distance; the initial ones need the
    /// weighted witness distance (witness) or nothing (baseline), and use the
    /// best-so-far distance only to cap their upper bound.
    pub fn estimate_distance(
        &self,
        method: EstimationMethod,
        theta: f64,
        t: u64,
        bsf_k: Option<f64>,
        witness_distance: Option<f64>,
    ) -> Result<DistanceEstimate> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid(format!("theta = {theta} must lie in (0, 1)")));
        }
        let missing = || Error::MissingModel(format!("no {method} model at or before leaf {t}"));
        let need_bsf = || bsf_k.ok_or_else(|| Error::invalid(format!("the {method} estimator needs a best-so-far distance")));
        match method {
            EstimationMethod::Linear => {
                let bsf = need_bsf()?;
                let i = self.checkpoint_for(t, |i| self.linear[i].is_some()).ok_or_else(missing)?;
                let m = self.linear[i].as_ref().expect("checked");
                let pi = m.predict_interval(&[bsf], theta, Sidedness::LowerOnly)?;
                Ok(one_sided(pi.point, pi.lower, bsf, Some(self.checkpoints[i])))
            }
            EstimationMethod::Kde2 => {
                let bsf = need_bsf()?;
                let i = self.checkpoint_for(t, |i| self.kde2[i].is_some()).ok_or_else(missing)?;
                let c = self.kde2[i].as_ref().expect("checked").conditional(&[bsf])?;
                Ok(from_conditional(c, theta, bsf, Some(self.checkpoints[i])))
            }
            EstimationMethod::Kde3 => {
                let bsf = need_bsf()?;
                let g = self.kde3.as_ref().ok_or_else(missing)?;
                let c = g.conditional(&[bsf, (t.max(1) as f64).log2()])?;
                Ok(from_conditional(c, theta, bsf, None))
            }
            EstimationMethod::Witness => {
                let dw = witness_distance.ok_or_else(|| Error::invalid("the witness estimator needs dw"))?;
                let m = self.witness_model.as_ref().ok_or_else(missing)?;
                let pi = m.predict_interval(&[dw], theta, Sidedness::TwoSided)?;
                Ok(two_sided(pi.point, pi.lower, pi.upper, bsf_k))
            }
            EstimationMethod::Baseline => {
                let b = self.baseline.as_ref().ok_or_else(missing)?;
                let (lo, hi) = b.interval(theta)?;
                Ok(two_sided(b.mean(), lo, hi, bsf_k))
            }
        }
    }

    /// Probability that the best-so-far answer after `t` leaves is exact.
    pub fn exact_probability(&self, t: u64, bsf_k: f64) -> Option<f64> {
        let i = self.checkpoint_for(t, |i| !self.exact_probability[i].is_absent())?;
        self.exact_probability[i].predict(&[bsf_k])
    }

    pub fn time_bound(&self, phi: f64) -> Option<&TimeBound> {
        self.time_bounds.iter().find(|b| (b.phi - phi).abs() < 1e-12)
    }

    /// Probability that the current majority class is the exact answer's class.
    pub fn class_probability(&self, t: u64, bsf: &[Neighbor], labels: &[u32]) -> Option<f64> {
        let cm = self.class_model.as_ref()?;
        let i = self.checkpoint_for(t, |i| !cm.per_checkpoint[i].is_absent())?;
        cm.per_checkpoint[i].predict(&cm.features(bsf, labels))
    }
}

fn one_sided(point: f64, lower: f64, bsf: f64, checkpoint: Option<u64>) -> DistanceEstimate {
    let upper = bsf.max(LOWER_BOUND_FLOOR);
    let point = point.clamp(LOWER_BOUND_FLOOR, upper);
    DistanceEstimate {
        point,
        lower: lower.clamp(LOWER_BOUND_FLOOR, point),
        upper,
        checkpoint,
    }
}

fn two_sided(point: f64, lower: f64, upper: f64, bsf: Option<f64>) -> DistanceEstimate {
    let upper = bsf.map_or(upper, |b| upper.min(b)).max(LOWER_BOUND_FLOOR);
    let point = point.clamp(LOWER_BOUND_FLOOR, upper);
    DistanceEstimate {
        point,
        lower: lower.clamp(LOWER_BOUND_FLOOR, point),
        upper,
        checkpoint: None,
    }
}

/// Estimate from a conditional density over the true distance. Mass above
/// the best-so-far distance is impossible and is dropped before reading off
/// the mean and the `theta` quantile.
fn from_conditional(c: Conditional, theta: f64, bsf: f64, checkpoint: Option<u64>) -> DistanceEstimate {
    let truncated = truncate_above(&c, bsf).unwrap_or(c);
    one_sided(truncated.mean(), truncated.quantile(theta), bsf, checkpoint)
}

fn truncate_above(c: &Conditional, bound: f64) -> Option<Conditional> {
    let mut mass: Vec<f64> = c
        .values
        .iter()
        .zip(&c.mass)
        .map(|(&v, &m)| if v <= bound { m } else { 0.0 })
        .collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    mass.iter_mut().for_each(|m| *m /= total);
    Some(Conditional {
        values: c.values.clone(),
        mass,
        clamped: c.clamped,
    })
}

#[cfg(test)]
mod tests;
