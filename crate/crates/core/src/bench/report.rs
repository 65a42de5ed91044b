use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::measures::{exact_class_ratio, exact_ratio, mean, median};
use super::{BenchConfig, Measurement, RepetitionData};
use crate::error::Result;
use crate::models::EstimationMethod;
use crate::stopping::{QueryOutcome, StoppingPolicy};

pub const REPORT_FORMAT: &str = "pros-report-1";

/// When an estimate is made: before the search, after a number of leaves, or
/// pooled over all evaluation checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Initial,
    Leaves(u64),
    Pooled,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Initial => f.write_str("initial"),
            Scope::Leaves(t) => write!(f, "{t}"),
            Scope::Pooled => f.write_str("pooled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub series_len: usize,
    pub indexed: usize,
    pub leaves: usize,
    pub class_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCell {
    pub method: EstimationMethod,
    pub theta: f64,
    pub scope: Scope,
    pub count: usize,
    /// Queries with a full answer but no model to estimate from.
    pub missing: usize,
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
    pub median_width: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialCell {
    pub method: EstimationMethod,
    pub theta: f64,
    pub checkpoints: Vec<u64>,
    pub count: usize,
    /// Fraction of queries whose intervals cover the truth at every test.
    pub family_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: StoppingPolicy,
    pub count: usize,
    pub stopped_ratio: f64,
    pub exact_ratio: Option<f64>,
    pub exact_class_ratio: Option<f64>,
    /// Leaf savings over the whole workload.
    pub time_savings: Option<f64>,
    pub mean_leaves: f64,
    /// Distance-error policies: fraction with family error below epsilon.
    pub epsilon_ratio: Option<f64>,
    pub stopped_accuracy: Option<f64>,
    pub exact_accuracy: Option<f64>,
    pub accuracy_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    /// `exact` or `class`.
    pub model: String,
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub mean_probability: Option<f64>,
    pub observed_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub leaves: u64,
    pub count: usize,
    pub exact_rate: Option<f64>,
    pub exact_class_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: usize,
    /// Accuracy of the exact k-NN classifier against the true labels.
    pub exact_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorCell>,
    pub policies: Vec<PolicyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub config: BenchConfig,
    pub dataset: DatasetSummary,
    pub estimators: Vec<EstimatorCell>,
    pub sequential: Vec<SequentialCell>,
    pub policies: Vec<PolicyRow>,
    pub calibration: Vec<CalibrationCell>,
    pub checkpoint_rates: Vec<RateCell>,
    pub classification: Option<ClassSummary>,
    pub repetitions: Vec<RepetitionSummary>,
}

fn estimator_cell(
    method: EstimationMethod,
    theta: f64,
    scope: Scope,
    m: &[&Measurement],
    missing: usize,
) -> EstimatorCell {
    let widths: Vec<f64> = m.iter().map(|x| x.upper - x.lower).collect();
    let covered = m.iter().filter(|x| x.lower <= x.truth && x.truth <= x.upper).count();
    let n = m.len();
    EstimatorCell {
        method,
        theta,
        scope,
        count: n,
        missing,
        coverage: (n > 0).then(|| covered as f64 / n as f64),
        mean_width: mean(&widths),
        median_width: median(&widths),
        rmse: (n > 0).then(|| (m.iter().map(|x| (x.point - x.truth).powi(2)).sum::<f64>() / n as f64).sqrt()),
    }
}

fn fraction(flags: impl Iterator<Item = bool>) -> (usize, Option<f64>) {
    let (mut n, mut hits) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hits += usize::from(f);
    }
    (n, (n > 0).then(|| hits as f64 / n as f64))
}

fn policy_row(policy: StoppingPolicy, outcomes: &[&QueryOutcome], truths: Option<&[u32]>) -> PolicyRow {
    let owned: Vec<QueryOutcome> = outcomes.iter().map(|&o| o.clone()).collect();
    let stopped: u64 = outcomes.iter().map(|o| o.leaves_visited).sum();
    let total: u64 = outcomes.iter().filter_map(|o| o.total_leaves).sum();
    let epsilon_ratio = match policy {
        StoppingPolicy::DistanceError { epsilon, .. } => {
            fraction(outcomes.iter().map(|o| o.family_error.is_some_and(|e| e < epsilon))).1
        }
        _ => None,
    };
    let (stopped_accuracy, exact_accuracy) = match truths {
        Some(t) => {
            let s = fraction(outcomes.iter().zip(t).map(|(o, &c)| o.predicted_class == Some(c))).1;
            let e = fraction(outcomes.iter().zip(t).map(|(o, &c)| o.exact_class == Some(c))).1;
            (s, e)
        }
        None => (None, None),
    };
    PolicyRow {
        policy,
        count: outcomes.len(),
        stopped_ratio: fraction(outcomes.iter().map(|o| o.stopped_at.is_some())).1.unwrap_or(0.0),
        exact_ratio: exact_ratio(&owned),
        exact_class_ratio: exact_class_ratio(&owned),
        time_savings: (total > 0).then(|| 1.0 - stopped as f64 / total as f64),
        mean_leaves: stopped as f64 / outcomes.len().max(1) as f64,
        epsilon_ratio,
        stopped_accuracy,
        exact_accuracy,
        accuracy_ratio: match (stopped_accuracy, exact_accuracy) {
            (Some(s), Some(e)) if e > 0.0 => Some(s / e),
            _ => None,
        },
    }
}

const CALIBRATION_BUCKETS: [(f64, f64); 3] = [(0.0, 0.5), (0.5, 0.9), (0.9, 1.0)];

pub(super) fn aggregate(config: &BenchConfig, dataset: DatasetSummary, reps: Vec<RepetitionData>) -> Report {
    let mut estimators = Vec::new();
    let mut repetitions: Vec<RepetitionSummary> = reps
        .iter()
        .map(|r| RepetitionSummary {
            repetition: r.repetition,
            seed: r.seed,
            estimators: Vec::new(),
            policies: Vec::new(),
        })
        .collect();

    let cells = reps.first().map_or(0, |r| r.estimators.len());
    let mut pooled: Vec<(EstimationMethod, f64, Vec<&Measurement>, usize)> = Vec::new();
    for i in 0..cells {
        let (method, theta, scope, _, _) = reps[0].estimators[i];
        let mut all = Vec::new();
        let mut missing = 0;
        for (r, rep) in reps.iter().enumerate() {
            let (_, _, _, m, miss) = &rep.estimators[i];
            let refs: Vec<&Measurement> = m.iter().collect();
            repetitions[r].estimators.push(estimator_cell(method, theta, scope, &refs, *miss));
            all.extend(refs);
            missing += miss;
        }
        if matches!(scope, Scope::Leaves(_)) {
            match pooled.iter_mut().find(|p| p.0 == method && p.1 == theta) {
                Some(p) => {
                    p.2.extend(all.iter().copied());
                    p.3 += missing;
                }
                None => pooled.push((method, theta, all.clone(), missing)),
            }
        }
        estimators.push(estimator_cell(method, theta, scope, &all, missing));
    }
    for (method, theta, all, missing) in &pooled {
        estimators.push(estimator_cell(*method, *theta, Scope::Pooled, all, *missing));
    }

    let sequential = (0..reps.first().map_or(0, |r| r.sequential.len()))
        .map(|i| {
            let (method, theta, _) = reps[0].sequential[i];
            let (count, family_coverage) = fraction(reps.iter().flat_map(|r| r.sequential[i].2.iter().copied()));
            SequentialCell {
                method,
                theta,
                checkpoints: config.sequential_checkpoints.clone(),
                count,
                family_coverage,
            }
        })
        .collect();

    let truths: Option<Vec<u32>> = reps
        .iter()
        .map(|r| r.true_classes.clone())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());
    let policies = config
        .policies
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            for (r, rep) in reps.iter().enumerate() {
                let o: Vec<&QueryOutcome> = rep.outcomes[i].iter().collect();
                let row = policy_row(p, &o, rep.true_classes.as_deref());
                repetitions[r].policies.push(row);
            }
            let o: Vec<&QueryOutcome> = reps.iter().flat_map(|r| r.outcomes[i].iter()).collect();
            policy_row(p, &o, truths.as_deref())
        })
        .collect();

    let mut calibration = Vec::new();
    for (which, name) in [(0, "exact"), (1, "class")] {
        let pairs: Vec<(f64, bool)> = reps.iter().flat_map(|r| r.calibration[which].iter().copied()).collect();
        if pairs.is_empty() {
            continue;
        }
        for (low, high) in CALIBRATION_BUCKETS {
            let inside: Vec<(f64, bool)> = pairs
                .iter()
                .copied()
                .filter(|&(p, _)| p >= low && (p < high || high == 1.0))
                .collect();
            let probs: Vec<f64> = inside.iter().map(|x| x.0).collect();
            let (count, observed_rate) = fraction(inside.iter().map(|x| x.1));
            calibration.push(CalibrationCell {
                model: name.to_string(),
                low,
                high,
                count,
                mean_probability: mean(&probs),
                observed_rate,
            });
        }
    }

    let checkpoint_rates = config
        .eval_checkpoints
        .iter()
        .enumerate()
        .map(|(i, &leaves)| {
            let (count, exact_rate) = fraction(reps.iter().flat_map(|r| r.rates[i].1.iter().copied()));
            let exact_class_rate = if reps.iter().all(|r| r.rates[i].2.is_some()) {
                fraction(reps.iter().flat_map(|r| r.rates[i].2.iter().flatten().copied())).1
            } else {
                None
            };
            RateCell {
                leaves,
                count,
                exact_rate,
                exact_class_rate,
            }
        })
        .collect();

    let classification = truths.as_ref().and_then(|t| {
        let i = config.policies.iter().position(|p| *p == StoppingPolicy::None)?;
        let outcomes = reps.iter().flat_map(|r| r.outcomes[i].iter());
        let (count, acc) = fraction(outcomes.zip(t).map(|(o, &c)| o.exact_class == Some(c)));
        Some(ClassSummary {
            count,
            exact_accuracy: acc?,
        })
    });

    Report {
        format: REPORT_FORMAT.to_string(),
        config: config.clone(),
        dataset,
        estimators,
        sequential,
        policies,
        calibration,
        checkpoint_rates,
        classification,
        repetitions,
    }
}

#[derive(Serialize)]
struct CsvRow {
    section: &'static str,
    name: String,
    level: Option<f64>,
    scope: String,
    count: usize,
    coverage: Option<f64>,
    mean_width: Option<f64>,
    median_width: Option<f64>,
    rmse: Option<f64>,
    exact_ratio: Option<f64>,
    exact_class_ratio: Option<f64>,
    accuracy_ratio: Option<f64>,
    time_savings: Option<f64>,
}

impl CsvRow {
    fn new(section: &'static str, name: String, level: Option<f64>, scope: String, count: usize) -> Self {
        CsvRow {
            section,
            name,
            level,
            scope,
            count,
            coverage: None,
            mean_width: None,
            median_width: None,
            rmse: None,
            exact_ratio: None,
            exact_class_ratio: None,
            accuracy_ratio: None,
            time_savings: None,
        }
    }
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Flat table of the aggregated cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.estimators {
            let mut row = CsvRow::new("estimator", c.method.to_string(), Some(c.theta), c.scope.to_string(), c.count);
            row.coverage = c.coverage;
            row.mean_width = c.mean_width;
            row.median_width = c.median_width;
            row.rmse = c.rmse;
            w.serialize(row).map_err(csv_error)?;
        }
        for c in &self.sequential {
            let scope = c.checkpoints.iter().map(u64::to_string).collect::<Vec<_>>().join("|");
            let mut row = CsvRow::new("sequential", c.method.to_string(), Some(c.theta), scope, c.count);
            row.coverage = c.family_coverage;
            w.serialize(row).map_err(csv_error)?;
        }
        for p in &self.policies {
            let mut row = CsvRow::new("policy", p.policy.to_string(), None, "stop".into(), p.count);
            row.coverage = p.epsilon_ratio;
            row.exact_ratio = p.exact_ratio;
            row.exact_class_ratio = p.exact_class_ratio;
            row.accuracy_ratio = p.accuracy_ratio;
            row.time_savings = p.time_savings;
            w.serialize(row).map_err(csv_error)?;
        }
        for c in &self.calibration {
            let mut row = CsvRow::new("calibration", c.model.clone(), Some(c.low), format!("{}-{}", c.low, c.high), c.count);
            row.exact_ratio = c.observed_rate;
            w.serialize(row).map_err(csv_error)?;
        }
        for c in &self.checkpoint_rates {
            let mut row = CsvRow::new("rate", "checkpoint".into(), None, c.leaves.to_string(), c.count);
            row.exact_ratio = c.exact_rate;
            row.exact_class_ratio = c.exact_class_rate;
            w.serialize(row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        Ok(())
    }

    pub fn estimator(&self, method: EstimationMethod, theta: f64, scope: Scope) -> Option<&EstimatorCell> {
        self.estimators
            .iter()
            .find(|c| c.method == method && c.theta == theta && c.scope == scope)
    }

    pub fn policy(&self, policy: &StoppingPolicy) -> Option<&PolicyRow> {
        self.policies.iter().find(|p| p.policy == *policy)
    }
}

fn csv_error(e: csv::Error) -> crate::Error {
    crate::Error::invalid(format!("csv: {e}"))
}
