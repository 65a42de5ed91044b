//! Exact progressive k-NN search on a leaves-visited clock.
//!
//! The search first descends to the most promising leaf, then visits the
//! remaining leaves best-first by node lower bound until the k-th best-so-far
//! distance rules out every unvisited node. All comparisons happen on squared
//! distances, ordered by `(distance, id)`, so results match the brute-force
//! scan bit for bit.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::index::{mindist_sq, IndexTree, NodeContent, NodeId, QueryContext};
use crate::series::{dtw_sq, lb_keogh_sq, squared_euclidean, DistanceKind};

pub const DEFAULT_CHECKPOINTS: [u64; 6] = [1, 4, 16, 64, 256, 1024];

// Relative and absolute slack on node and LB_Keogh pruning; lower bounds are
// computed along a different floating-point path than the distances they bound.
const PRUNE_RELATIVE: f64 = 1e-9;
const PRUNE_ABSOLUTE: f64 = 1e-12;

/// Exact distances below this are excluded from the family-wise correction.
pub const FAMILY_ZERO_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f64,
}

/// Neighbors sorted by ascending distance, ties by id.
pub type KnnAnswer = Vec<Neighbor>;

/// Shared flag a client raises to stop a running search at the next leaf.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, AtomicOrdering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(AtomicOrdering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub k: usize,
    pub distance: DistanceKind,
    /// Leaf counts at which events are emitted, strictly increasing.
    pub checkpoints: Vec<u64>,
    /// Emit an event after every leaf instead of on the schedule.
    pub every_leaf: bool,
    pub stop: Option<StopSignal>,
    pub record_wallclock: bool,
}

impl SearchConfig {
    pub fn new(k: usize, distance: DistanceKind) -> Self {
        Self {
            k,
            distance,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            every_leaf: false,
            stop: None,
            record_wallclock: false,
        }
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<u64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn with_every_leaf(mut self) -> Self {
        self.every_leaf = true;
        self
    }

    pub fn with_stop(mut self, stop: StopSignal) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn with_wallclock(mut self) -> Self {
        self.record_wallclock = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints.first() == Some(&0) {
            return Err(Error::invalid("checkpoints must be positive and strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveEvent {
    pub leaves_visited: u64,
    pub bsf_distances: Vec<f64>,
    pub bsf_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wallclock_ns: Option<u64>,
}

impl ProgressiveEvent {
    /// Current k-th best-so-far distance.
    pub fn bsf_k(&self) -> f64 {
        *self.bsf_distances.last().expect("events carry a full answer")
    }

    pub fn neighbors(&self) -> KnnAnswer {
        self.bsf_ids
            .iter()
            .zip(&self.bsf_distances)
            .map(|(&id, &distance)| Neighbor { id, distance })
            .collect()
    }
}

/// Best-so-far set right after a leaf that changed it; may hold fewer than k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsfSnapshot {
    pub leaves_visited: u64,
    pub neighbors: KnnAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub k: usize,
    pub events: Vec<ProgressiveEvent>,
    pub improvements: Vec<BsfSnapshot>,
    /// Known only when the search ran to completion.
    pub exact_distances: Option<Vec<f64>>,
    /// Leaf count at which the first `i + 1` exact neighbors were all in place.
    pub leaves_to_exact: Option<Vec<u64>>,
    pub total_leaves: u64,
    pub stopped_early_at: Option<u64>,
    pub answer: KnnAnswer,
}

impl SearchTrace {
    pub fn is_complete(&self) -> bool {
        self.stopped_early_at.is_none()
    }

    /// Best-so-far set after `t` leaves, if it already held k neighbors.
    pub fn bsf_at(&self, t: u64) -> Option<&[Neighbor]> {
        let idx = self.improvements.partition_point(|s| s.leaves_visited <= t);
        let snap = self.improvements[..idx].last()?;
        (snap.neighbors.len() == self.k).then_some(snap.neighbors.as_slice())
    }

    /// k-th best-so-far distance after `t` leaves.
    pub fn bsf_k_at(&self, t: u64) -> Option<f64> {
        self.bsf_at(t).map(|n| n[n.len() - 1].distance)
    }

    /// The answer the search held when it first had k neighbors.
    pub fn first_approximate(&self) -> Option<&BsfSnapshot> {
        self.improvements.iter().find(|s| s.neighbors.len() == self.k)
    }

    /// Whether the full exact answer was in place after `t` leaves.
    pub fn is_exact_at(&self, t: u64) -> Option<bool> {
        let l = self.leaves_to_exact.as_ref()?;
        Some(t >= l[l.len() - 1])
    }

    pub fn leaves_to_exact_k(&self) -> Option<u64> {
        self.leaves_to_exact.as_ref().map(|l| l[l.len() - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Leaf-at-a-time driver. `progressive_knn` wraps it with event emission;
/// callers needing their own loop can drive it directly.
pub struct ProgressiveSearch<'t> {
    tree: &'t IndexTree,
    ctx: QueryContext,
    k: usize,
    /// Squared distances and ids, sorted by `(sq, id)`.
    bsf: Vec<(f64, u32)>,
    heap: BinaryHeap<Reverse<(Key, NodeId)>>,
    first_leaf: Option<NodeId>,
    leaves: u64,
    finished: bool,
    changed: bool,
}

impl<'t> ProgressiveSearch<'t> {
    pub fn new(tree: &'t IndexTree, query: &[f64], config: &SearchConfig) -> Result<Self> {
        config.validate()?;
        if let Some(position) = query.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { position });
        }
        if let DistanceKind::Dtw { band } = config.distance {
            if band >= query.len() {
                return Err(Error::invalid(format!(
                    "DTW band {band} must be below the series length {}",
                    query.len()
                )));
            }
        }
        let ctx = tree.query_context(query, config.distance)?;
        Ok(Self {
            tree,
            ctx,
            k: config.k,
            bsf: Vec::with_capacity(config.k + 1),
            heap: BinaryHeap::new(),
            first_leaf: None,
            leaves: 0,
            finished: false,
            changed: false,
        })
    }

    pub fn leaves_visited(&self) -> u64 {
        self.leaves
    }

    pub fn is_full(&self) -> bool {
        self.bsf.len() == self.k
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Whether the last visited leaf changed the best-so-far set.
    pub fn improved(&self) -> bool {
        self.changed
    }

    pub fn answer(&self) -> KnnAnswer {
        self.bsf
            .iter()
            .map(|&(sq, id)| Neighbor { id, distance: sq.sqrt() })
            .collect()
    }

    fn threshold(&self) -> f64 {
        if self.is_full() {
            self.bsf[self.k - 1].0
        } else {
            f64::INFINITY
        }
    }

    fn prunes(&self, mindist_sq: f64) -> bool {
        self.is_full() && mindist_sq > self.threshold() * (1.0 + PRUNE_RELATIVE) + PRUNE_ABSOLUTE
    }

    fn node_bound(&self, node: NodeId) -> f64 {
        mindist_sq(&self.ctx, &self.tree.node(node).synopsis, self.tree.layout())
    }

    /// Visits the next leaf. Returns `false` once no unvisited leaf can hold
    /// a better answer, which makes the current answer exact.
    pub fn step(&mut self) -> Result<bool> {
        self.changed = false;
        if self.finished {
            return Ok(false);
        }
        if self.first_leaf.is_none() {
            let leaf = self.tree.most_promising_leaf(&self.ctx);
            self.first_leaf = Some(leaf);
            let root = self.tree.root();
            if root != leaf {
                self.heap.push(Reverse((Key(self.node_bound(root)), root)));
            }
            self.visit(leaf);
            self.settle();
            return Ok(true);
        }
        while let Some(Reverse((Key(bound), node))) = self.heap.pop() {
            if self.prunes(bound) {
                self.heap.clear();
                break;
            }
            if Some(node) == self.first_leaf {
                continue;
            }
            match &self.tree.node(node).content {
                NodeContent::Internal { children } => {
                    for &c in children {
                        let b = self.node_bound(c);
                        if !self.prunes(b) {
                            self.heap.push(Reverse((Key(b), c)));
                        }
                    }
                }
                NodeContent::Leaf { .. } => {
                    self.visit(node);
                    self.settle();
                    return Ok(true);
                }
            }
        }
        self.finished = true;
        Ok(false)
    }

    /// Expands internal nodes until the cheapest entry is a leaf worth
    /// visiting, so that `is_finished` is exact right after the last leaf.
    /// The visiting order is the same as with lazy expansion because the
    /// best-so-far set does not change in between.
    fn settle(&mut self) {
        while let Some(&Reverse((Key(bound), node))) = self.heap.peek() {
            if self.prunes(bound) {
                self.heap.clear();
                break;
            }
            if Some(node) == self.first_leaf {
                self.heap.pop();
                continue;
            }
            match &self.tree.node(node).content {
                NodeContent::Leaf { .. } => return,
                NodeContent::Internal { children } => {
                    self.heap.pop();
                    for &c in children {
                        let b = self.node_bound(c);
                        if !self.prunes(b) {
                            self.heap.push(Reverse((Key(b), c)));
                        }
                    }
                }
            }
        }
        self.finished = true;
    }

    fn visit(&mut self, leaf: NodeId) {
        self.leaves += 1;
        let NodeContent::Leaf { ids } = &self.tree.node(leaf).content else {
            unreachable!("visit is only called on leaves")
        };
        let dataset = self.tree.dataset();
        for &id in ids {
            let candidate = dataset.series(id);
            let bound = self.threshold();
            let sq = match &self.ctx.envelope {
                None => squared_euclidean(&self.ctx.values, candidate, bound),
                Some((env, _)) => {
                    if self.prunes(lb_keogh_sq(env, candidate)) {
                        continue;
                    }
                    dtw_sq(&self.ctx.values, candidate, env.band_radius, bound)
                }
            };
            if let Some(sq) = sq {
                self.offer(sq, id);
            }
        }
    }

    fn offer(&mut self, sq: f64, id: u32) {
        let less = |a: (f64, u32), b: (f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) == Ordering::Less;
        if self.is_full() && !less((sq, id), self.bsf[self.k - 1]) {
            return;
        }
        let pos = self.bsf.partition_point(|&e| less(e, (sq, id)));
        self.bsf.insert(pos, (sq, id));
        self.bsf.truncate(self.k);
        self.changed = true;
    }
}

/// Runs an exact search, calling `on_event` when the best-so-far set first
/// holds k neighbors, at each scheduled checkpoint after that and once more
/// at completion if the last leaf was not already reported. Returning
/// `ControlFlow::Break` from the callback, or raising the stop signal, ends
/// the search at the next leaf boundary.
pub fn progressive_knn<F>(tree: &IndexTree, query: &[f64], config: &SearchConfig, mut on_event: F) -> Result<SearchTrace>
where
    F: FnMut(&ProgressiveEvent) -> ControlFlow<()>,
{
    let mut search = ProgressiveSearch::new(tree, query, config)?;
    let started = Instant::now();
    let mut events: Vec<ProgressiveEvent> = Vec::new();
    let mut improvements = Vec::new();
    let mut next_checkpoint = 0;
    let mut stopped = false;

    let make_event = |search: &ProgressiveSearch<'_>| {
        let answer = search.answer();
        ProgressiveEvent {
            leaves_visited: search.leaves_visited(),
            bsf_distances: answer.iter().map(|n| n.distance).collect(),
            bsf_ids: answer.iter().map(|n| n.id).collect(),
            wallclock_ns: config.record_wallclock.then(|| started.elapsed().as_nanos() as u64),
        }
    };

    loop {
        if config.stop.as_ref().is_some_and(StopSignal::is_stopped) {
            stopped = true;
            break;
        }
        if !search.step()? {
            break;
        }
        let t = search.leaves_visited();
        if search.improved() {
            improvements.push(BsfSnapshot {
                leaves_visited: t,
                neighbors: search.answer(),
            });
        }
        while next_checkpoint < config.checkpoints.len() && config.checkpoints[next_checkpoint] < t {
            next_checkpoint += 1;
        }
        let on_schedule = config.every_leaf || config.checkpoints.get(next_checkpoint) == Some(&t);
        if search.is_full() && (on_schedule || events.is_empty()) {
            let event = make_event(&search);
            let flow = on_event(&event);
            events.push(event);
            if flow.is_break() {
                stopped = true;
                break;
            }
        }
    }

    let total = search.leaves_visited();
    let answer = search.answer();
    let complete = !stopped;
    if complete && search.is_full() && events.last().map(|e| e.leaves_visited) != Some(total) {
        let event = make_event(&search);
        let _ = on_event(&event);
        events.push(event);
    }
    let (exact_distances, leaves_to_exact) = if complete {
        let exact_ids: Vec<u32> = answer.iter().map(|n| n.id).collect();
        let mut l2e = vec![total; answer.len()];
        for (i, slot) in l2e.iter_mut().enumerate() {
            if let Some(s) = improvements.iter().find(|s| {
                s.neighbors.len() > i && s.neighbors[..=i].iter().map(|n| n.id).eq(exact_ids[..=i].iter().copied())
            }) {
                *slot = s.leaves_visited;
            }
        }
        (Some(answer.iter().map(|n| n.distance).collect()), Some(l2e))
    } else {
        (None, None)
    };
    Ok(SearchTrace {
        k: config.k,
        events,
        improvements,
        exact_distances,
        leaves_to_exact,
        total_leaves: total,
        stopped_early_at: (!complete).then_some(total),
        answer,
    })
}

/// Exact k-NN by a full scan over every series of the dataset.
pub fn brute_force_knn(dataset: &Dataset, query: &[f64], k: usize, distance: DistanceKind) -> Result<KnnAnswer> {
    let ids: Vec<u32> = (0..dataset.n() as u32).collect();
    brute_force_knn_among(dataset, &ids, query, k, distance)
}

/// Exact k-NN by a full scan over `ids`.
pub fn brute_force_knn_among(
    dataset: &Dataset,
    ids: &[u32],
    query: &[f64],
    k: usize,
    distance: DistanceKind,
) -> Result<KnnAnswer> {
    if k == 0 || k > ids.len() {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {}]", ids.len())));
    }
    if query.len() != dataset.series_len() {
        return Err(Error::LengthMismatch {
            expected: dataset.series_len(),
            actual: query.len(),
        });
    }
    if let DistanceKind::Dtw { band } = distance {
        if band >= query.len() {
            return Err(Error::invalid(format!("DTW band {band} must be below the series length")));
        }
    }
    let mut all: Vec<(f64, u32)> = ids
        .iter()
        .map(|&id| (distance.distance_sq(query, dataset.series(id)), id))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(all[..k]
        .iter()
        .map(|&(sq, id)| Neighbor { id, distance: sq.sqrt() })
        .collect())
}

/// Relative distance error of a best-so-far distance against an estimate.
pub fn relative_error(bsf_k: f64, dhat: f64) -> Result<f64> {
    if !(dhat > 0.0) || !bsf_k.is_finite() {
        return Err(Error::invalid(format!("relative error needs a positive estimate, got {dhat}")));
    }
    Ok(bsf_k / dhat - 1.0)
}

/// k-th exact distance shrunk by the worst per-rank ratio at `t`, so the
/// relative error against it bounds the error of every rank at once.
pub fn family_corrected_knn(trace: &SearchTrace, t: u64) -> Result<f64> {
    let exact = trace
        .exact_distances
        .as_ref()
        .ok_or_else(|| Error::invalid("family correction needs a completed trace"))?;
    let bsf = trace
        .bsf_at(t)
        .ok_or_else(|| Error::invalid(format!("no full best-so-far answer after {t} leaves")))?;
    Ok(family_corrected(exact, &bsf.iter().map(|n| n.distance).collect::<Vec<_>>()))
}

/// Family-wise correction from explicit exact and best-so-far distances.
pub fn family_corrected(exact: &[f64], bsf: &[f64]) -> f64 {
    let worst = exact
        .iter()
        .zip(bsf)
        .filter(|(&e, _)| e >= FAMILY_ZERO_EPSILON)
        .map(|(&e, &b)| b / e)
        .fold(1.0_f64, f64::max);
    exact[exact.len() - 1] / worst
}

/// Family-wise distance error: the largest relative error over all ranks.
pub fn family_error(exact: &[f64], bsf: &[f64]) -> f64 {
    bsf[bsf.len() - 1] / family_corrected(exact, bsf) - 1.0
}
