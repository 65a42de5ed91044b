//! Stopping criteria and policy-driven query execution.
//!
//! A policy is consulted only at decision moments: the uniform moments
//! planned at training time for the distance-error, probability and class
//! criteria, and a single moment at the leaf budget for the time bound. A
//! missing model at a moment means the search continues.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::{majority_class, neighbor_labels};
use crate::error::{Error, Result};
use crate::index::IndexTree;
use crate::models::{EstimationMethod, GuaranteeBundle, TrainingRecord};
use crate::search::{family_error, KnnAnswer, Neighbor, ProgressiveEvent, ProgressiveSearch, SearchConfig, StopSignal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingPolicy {
    None,
    /// Stop once `bsf / lower - 1 < epsilon`, with `lower` the one-sided
    /// `theta` lower bound of the family-corrected k-th distance.
    DistanceError {
        epsilon: f64,
        theta: f64,
        #[serde(default = "default_method")]
        method: EstimationMethod,
    },
    /// Stop after the leaf budget that holds the exact answer with
    /// probability `1 - phi`, planned from the first approximate answer.
    TimeBound { phi: f64 },
    /// Stop once the estimated probability of an exact answer reaches `1 - phi`.
    Probability { phi: f64 },
    /// Stop once the estimated probability that the majority class is exact
    /// reaches `1 - phi`.
    ClassProbability { phi: f64 },
}

fn default_method() -> EstimationMethod {
    EstimationMethod::Kde2
}

impl StoppingPolicy {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        match *self {
            StoppingPolicy::None => Ok(()),
            StoppingPolicy::DistanceError { epsilon, theta, .. } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid(format!("epsilon = {epsilon} must be positive")));
                }
                unit("theta", theta)
            }
            StoppingPolicy::TimeBound { phi } | StoppingPolicy::Probability { phi } => unit("phi", phi),
            StoppingPolicy::ClassProbability { phi } => unit("phi_c", phi),
        }
    }

    pub fn needs_labels(&self) -> bool {
        matches!(self, StoppingPolicy::ClassProbability { .. })
    }
}

impl fmt::Display for StoppingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingPolicy::None => f.write_str("none"),
            StoppingPolicy::DistanceError { epsilon, theta, method } => write!(f, "error:{epsilon}:{theta}:{method}"),
            StoppingPolicy::TimeBound { phi } => write!(f, "time:{phi}"),
            StoppingPolicy::Probability { phi } => write!(f, "prob:{phi}"),
            StoppingPolicy::ClassProbability { phi } => write!(f, "class:{phi}"),
        }
    }
}

impl FromStr for StoppingPolicy {
    type Err = Error;

    /// Parses `none`, `error:EPS:THETA[:METHOD]`, `time:PHI`, `prob:PHI` or `class:PHI`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::invalid(format!("`{v}` is not a number in policy `{s}`")))
        };
        let policy = match parts.as_slice() {
            ["none"] => StoppingPolicy::None,
            ["error", e, t] => StoppingPolicy::DistanceError {
                epsilon: num(e)?,
                theta: num(t)?,
                method: default_method(),
            },
            ["error", e, t, m] => StoppingPolicy::DistanceError {
                epsilon: num(e)?,
                theta: num(t)?,
                method: m.parse()?,
            },
            ["time", p] => StoppingPolicy::TimeBound { phi: num(p)? },
            ["prob", p] => StoppingPolicy::Probability { phi: num(p)? },
            ["class", p] => StoppingPolicy::ClassProbability { phi: num(p)? },
            _ => return Err(Error::invalid(format!("unrecognized stopping policy `{s}`"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// `m` uniform moments up to `t_max` leaves: `ceil(i * t_max / m)` for
/// `i = 1..=m`, deduplicated.
pub fn plan_moments(t_max: u64, m: usize) -> Result<Vec<u64>> {
    if m == 0 {
        return Err(Error::invalid("at least one moment is needed"));
    }
    let t_max = t_max.max(1);
    let mut out: Vec<u64> = (1..=m as u64).map(|i| (i * t_max).div_ceil(m as u64)).collect();
    out.dedup();
    Ok(out)
}

/// Moments from the largest leaves-to-exact count among training records.
pub fn plan_moments_from(records: &[TrainingRecord], m: usize) -> Result<Vec<u64>> {
    let t_max = records
        .iter()
        .map(TrainingRecord::leaves_to_exact_k)
        .max()
        .ok_or_else(|| Error::invalid("planning moments needs at least one record"))?;
    plan_moments(t_max, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "snake_case")]
pub enum StopReason {
    DistanceError { bound: f64, lower: f64 },
    TimeBound { budget: u64 },
    Probability { probability: f64 },
    ClassProbability { probability: f64 },
    /// Stopped from outside (stop signal or observer).
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Continue,
    Stop(StopReason),
}

/// One consultation of the policy, kept for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub leaves_visited: u64,
    pub stop: bool,
    /// Quantity the criterion compared: the error bound, the probability or
    /// the leaf budget. `None` when no model was available.
    pub statistic: Option<f64>,
}

/// What the policy sees at a decision moment.
#[derive(Debug, Clone, Copy)]
pub struct DecisionInput<'a> {
    pub leaves_visited: u64,
    /// Full best-so-far set, nearest first.
    pub bsf: &'a [Neighbor],
    pub witness_distance: Option<f64>,
    pub labels: Option<&'a [u32]>,
    pub time_budget: Option<u64>,
}

/// Pure decision rule for one moment.
pub fn decide(policy: &StoppingPolicy, bundle: &GuaranteeBundle, input: &DecisionInput<'_>) -> (Decision, Option<f64>) {
    let t = input.leaves_visited;
    let bsf_k = input.bsf[input.bsf.len() - 1].distance;
    match *policy {
        StoppingPolicy::None => (Decision::Continue, None),
        StoppingPolicy::DistanceError { epsilon, theta, method } => {
            let Ok(est) = bundle.estimate_distance(method, theta, t, Some(bsf_k), input.witness_distance) else {
                return (Decision::Continue, None);
            };
            let bound = bsf_k / est.lower - 1.0;
            if bound < epsilon {
                (Decision::Stop(StopReason::DistanceError { bound, lower: est.lower }), Some(bound))
            } else {
                (Decision::Continue, Some(bound))
            }
        }
        StoppingPolicy::TimeBound { .. } => match input.time_budget {
            Some(budget) if t >= budget => (Decision::Stop(StopReason::TimeBound { budget }), Some(budget as f64)),
            Some(budget) => (Decision::Continue, Some(budget as f64)),
            None => (Decision::Continue, None),
        },
        StoppingPolicy::Probability { phi } => match bundle.exact_probability(t, bsf_k) {
            Some(p) if p >= 1.0 - phi => (Decision::Stop(StopReason::Probability { probability: p }), Some(p)),
            p => (Decision::Continue, p),
        },
        StoppingPolicy::ClassProbability { phi } => {
            let p = input.labels.and_then(|l| bundle.class_probability(t, input.bsf, l));
            match p {
                Some(p) if p >= 1.0 - phi => (Decision::Stop(StopReason::ClassProbability { probability: p }), Some(p)),
                p => (Decision::Continue, p),
            }
        }
    }
}

/// When the policy is consulted.
#[derive(Debug, Clone, PartialEq)]
enum Schedule {
    Never,
    /// At these leaf counts, when the best-so-far set is full there.
    Moments(Vec<u64>),
    /// Once, at the first full moment at or after the budget, fixed when the
    /// first approximate answer appears.
    Budget,
}

impl Schedule {
    fn of(policy: &StoppingPolicy, bundle: &GuaranteeBundle) -> Self {
        match policy {
            StoppingPolicy::None => Schedule::Never,
            StoppingPolicy::TimeBound { .. } => Schedule::Budget,
            _ => Schedule::Moments(bundle.moments.clone()),
        }
    }

    fn due(&self, t: u64, budget: Option<u64>, decided: bool) -> bool {
        match self {
            Schedule::Never => false,
            Schedule::Moments(m) => m.binary_search(&t).is_ok(),
            Schedule::Budget => !decided && budget.is_some_and(|b| t >= b),
        }
    }
}

fn time_budget(policy: &StoppingPolicy, bundle: &GuaranteeBundle, first_distance: f64) -> Option<u64> {
    match *policy {
        StoppingPolicy::TimeBound { phi } => bundle.time_bound(phi).map(|b| b.leaves(first_distance)),
        _ => None,
    }
}

/// Result of one query under a policy. The audit fields are filled when the
/// search is continued to completion after the stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub policy: StoppingPolicy,
    pub answer: KnnAnswer,
    /// Leaf count at which the policy stopped the search, if it did.
    pub stopped_at: Option<u64>,
    pub reason: Option<StopReason>,
    pub leaves_visited: u64,
    /// Leaves a full search visits.
    pub total_leaves: Option<u64>,
    pub exact: Option<KnnAnswer>,
    pub was_exact: Option<Vec<bool>>,
    pub answer_exact: Option<bool>,
    /// Largest relative distance error over the ranks.
    pub family_error: Option<f64>,
    pub predicted_class: Option<u32>,
    pub exact_class: Option<u32>,
    pub was_exact_class: Option<bool>,
    /// `1 - stopped_at / total_leaves`, or 0 for a search that ran to completion.
    pub savings: Option<f64>,
    pub time_budget: Option<u64>,
    pub decisions: Vec<DecisionRecord>,
}

impl QueryOutcome {
    fn finish(
        policy: StoppingPolicy,
        answer: KnnAnswer,
        stopped_at: Option<u64>,
        reason: Option<StopReason>,
        leaves_visited: u64,
        audit: Option<(KnnAnswer, u64)>,
        labels: Option<&[u32]>,
        time_budget: Option<u64>,
        decisions: Vec<DecisionRecord>,
    ) -> Result<Self> {
        let predicted_class = match labels {
            Some(l) if !answer.is_empty() => Some(majority_class(&neighbor_labels(&answer, l))?),
            _ => None,
        };
        let mut out = QueryOutcome {
            policy,
            answer,
            stopped_at,
            reason,
            leaves_visited,
            total_leaves: None,
            exact: None,
            was_exact: None,
            answer_exact: None,
            family_error: None,
            predicted_class,
            exact_class: None,
            was_exact_class: None,
            savings: None,
            time_budget,
            decisions,
        };
        if let Some((exact, total)) = audit {
            let per_rank: Vec<bool> = out.answer.iter().zip(&exact).map(|(a, e)| a.id == e.id).collect();
            let all = per_rank.len() == exact.len() && per_rank.iter().all(|&b| b);
            let dist = |v: &[Neighbor]| v.iter().map(|n| n.distance).collect::<Vec<_>>();
            if out.answer.len() == exact.len() {
                out.family_error = Some(family_error(&dist(&exact), &dist(&out.answer)));
            }
            if let Some(l) = labels {
                let ec = majority_class(&neighbor_labels(&exact, l))?;
                out.was_exact_class = out.predicted_class.map(|p| p == ec);
                out.exact_class = Some(ec);
            }
            out.savings = Some(match stopped_at {
                Some(s) => 1.0 - s as f64 / total as f64,
                None => 0.0,
            });
            out.total_leaves = Some(total);
            out.was_exact = Some(per_rank);
            out.answer_exact = Some(all);
            out.exact = Some(exact);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Continue to completion after a stop to fill the audit fields.
    pub audit: bool,
    /// Class labels of the indexed dataset, row-aligned with its series.
    pub labels: Option<&'a [u32]>,
    /// Extra leaf counts at which the observer is called.
    pub checkpoints: Vec<u64>,
    pub stop: Option<StopSignal>,
}

/// Progress report handed to the observer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvent {
    pub event: ProgressiveEvent,
    pub decision: Option<DecisionRecord>,
    pub time_budget: Option<u64>,
    /// Why the policy stops the search at this event, if it does.
    pub reason: Option<StopReason>,
    /// Whether the search ends with this event.
    pub last: bool,
}

pub fn run_with_policy(
    tree: &IndexTree,
    bundle: &GuaranteeBundle,
    query: &[f64],
    policy: &StoppingPolicy,
    options: &RunOptions<'_>,
) -> Result<QueryOutcome> {
    run_with_policy_observed(tree, bundle, query, policy, options, |_| ControlFlow::Continue(()))
}

/// Runs a search under `policy`. The observer sees the first full answer,
/// every decision, each requested checkpoint and the final answer; breaking
/// from it stops the search like the stop signal does.
pub fn run_with_policy_observed<F>(
    tree: &IndexTree,
    bundle: &GuaranteeBundle,
    query: &[f64],
    policy: &StoppingPolicy,
    options: &RunOptions<'_>,
    mut observer: F,
) -> Result<QueryOutcome>
where
    F: FnMut(&PolicyEvent) -> ControlFlow<()>,
{
    policy.validate()?;
    bundle.check_compatible(tree, bundle.k, bundle.distance)?;
    if policy.needs_labels() && options.labels.is_none() {
        return Err(Error::invalid("the class criterion needs dataset labels"));
    }
    if policy.needs_labels() && bundle.class_model.is_none() {
        return Err(Error::MissingModel("the bundle has no class model".into()));
    }
    if let Some(l) = options.labels {
        if l.len() != tree.dataset().n() {
            return Err(Error::invalid(format!(
                "{} labels for a dataset of {} series",
                l.len(),
                tree.dataset().n()
            )));
        }
    }
    let witness_distance = match policy {
        StoppingPolicy::DistanceError {
            method: EstimationMethod::Witness,
            ..
        } => Some(bundle.weighted_witness_distance(query)?),
        _ => None,
    };
    let config = SearchConfig::new(bundle.k, bundle.distance);
    let mut search = ProgressiveSearch::new(tree, query, &config)?;
    let schedule = Schedule::of(policy, bundle);
    let mut budget = None;
    let mut decided = false;
    let mut decisions = Vec::new();
    let mut stop: Option<StopReason> = None;
    let mut first_full = true;

    loop {
        if options.stop.as_ref().is_some_and(StopSignal::is_stopped) && search.leaves_visited() > 0 {
            stop = Some(StopReason::User);
            break;
        }
        if !search.step()? {
            break;
        }
        if !search.is_full() {
            continue;
        }
        let t = search.leaves_visited();
        let answer = search.answer();
        if first_full {
            budget = time_budget(policy, bundle, answer[answer.len() - 1].distance);
        }
        let finished = search.is_finished();
        let mut record = None;
        if !finished && schedule.due(t, budget, decided) {
            decided = true;
            let input = DecisionInput {
                leaves_visited: t,
                bsf: &answer,
                witness_distance,
                labels: options.labels,
                time_budget: budget,
            };
            let (decision, statistic) = decide(policy, bundle, &input);
            let r = DecisionRecord {
                leaves_visited: t,
                stop: matches!(decision, Decision::Stop(_)),
                statistic,
            };
            decisions.push(r);
            record = Some(r);
            if let Decision::Stop(reason) = decision {
                stop = Some(reason);
            }
        }
        let requested = options.checkpoints.binary_search(&t).is_ok();
        if first_full || record.is_some() || requested || finished || stop.is_some() {
            let answer_ids = answer.iter().map(|n| n.id).collect();
            let pe = PolicyEvent {
                event: ProgressiveEvent {
                    leaves_visited: t,
                    bsf_distances: answer.iter().map(|n| n.distance).collect(),
                    bsf_ids: answer_ids,
                    wallclock_ns: None,
                },
                decision: record,
                time_budget: budget,
                reason: stop,
                last: finished || stop.is_some(),
            };
            if observer(&pe).is_break() && stop.is_none() && !finished {
                stop = Some(StopReason::User);
            }
        }
        first_full = false;
        if stop.is_some() {
            break;
        }
    }

    let answer = search.answer();
    let leaves = search.leaves_visited();
    let stopped_at = stop.map(|_| leaves);
    let audit = if options.audit {
        while search.step()? {}
        Some((search.answer(), search.leaves_visited()))
    } else if stop.is_none() {
        Some((answer.clone(), leaves))
    } else {
        None
    };
    QueryOutcome::finish(
        *policy,
        answer,
        stopped_at,
        stop,
        leaves,
        audit,
        options.labels,
        budget,
        decisions,
    )
}

/// Applies `policy` to a recorded complete search. Gives the same outcome as
/// an audited live run of the same query.
pub fn replay(
    record: &TrainingRecord,
    bundle: &GuaranteeBundle,
    policy: &StoppingPolicy,
    labels: Option<&[u32]>,
) -> Result<QueryOutcome> {
    policy.validate()?;
    if record.k != bundle.k {
        return Err(Error::BundleMismatch(format!(
            "record has k = {}, bundle has k = {}",
            record.k, bundle.k
        )));
    }
    if policy.needs_labels() && labels.is_none() {
        return Err(Error::invalid("the class criterion needs dataset labels"));
    }
    let schedule = Schedule::of(policy, bundle);
    let (first_t, first_d) = record.first_approximate();
    let budget = time_budget(policy, bundle, first_d);
    let witness_distance = Some(record.witness_distance);
    let total = record.total_leaves;

    let candidates: Vec<u64> = match &schedule {
        Schedule::Never => Vec::new(),
        Schedule::Moments(m) => m.iter().copied().filter(|&t| t >= first_t).collect(),
        Schedule::Budget => budget.map(|b| vec![b.max(first_t)]).unwrap_or_default(),
    };
    let mut decisions = Vec::new();
    let mut stop = None;
    for t in candidates {
        if t >= total {
            break;
        }
        let bsf = record.bsf_at(t).expect("full from the first approximate answer on");
        let input = DecisionInput {
            leaves_visited: t,
            bsf,
            witness_distance,
            labels,
            time_budget: budget,
        };
        let (decision, statistic) = decide(policy, bundle, &input);
        decisions.push(DecisionRecord {
            leaves_visited: t,
            stop: matches!(decision, Decision::Stop(_)),
            statistic,
        });
        if let Decision::Stop(reason) = decision {
            stop = Some((t, reason));
            break;
        }
    }
    let (answer, stopped_at, reason, leaves) = match stop {
        Some((t, reason)) => (record.bsf_at(t).expect("checked").to_vec(), Some(t), Some(reason), t),
        None => (record.exact.clone(), None, None, total),
    };
    QueryOutcome::finish(
        *policy,
        answer,
        stopped_at,
        reason,
        leaves,
        Some((record.exact.clone(), total)),
        labels,
        budget,
        decisions,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_are_uniform_and_deduplicated() {
        assert_eq!(plan_moments(1600, 16).unwrap(), (1..=16).map(|i| i * 100).collect::<Vec<_>>());
        assert_eq!(plan_moments(1600, 1).unwrap(), vec![1600]);
        let m = plan_moments(10, 16).unwrap();
        assert_eq!(*m.last().unwrap(), 10);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(m, (1..=10).collect::<Vec<_>>());
        assert!(plan_moments(10, 0).is_err());
    }

    #[test]
    fn policy_strings_round_trip() {
        for s in ["none", "error:0.05:0.05:kde2", "error:0.01:0.1:witness", "time:0.05", "prob:0.01", "class:0.05"] {
            let p: StoppingPolicy = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<StoppingPolicy>(&json).unwrap(), p);
        }
        assert_eq!(
            "error:0.1:0.05".parse::<StoppingPolicy>().unwrap(),
            StoppingPolicy::DistanceError {
                epsilon: 0.1,
                theta: 0.05,
                method: EstimationMethod::Kde2
            }
        );
        for bad in ["", "time", "time:1.5", "prob:0", "error:-1:0.05", "error:0.1:0.05:nope", "class:x", "later:0.1"] {
            assert!(bad.parse::<StoppingPolicy>().is_err(), "{bad}");
        }
    }
}
