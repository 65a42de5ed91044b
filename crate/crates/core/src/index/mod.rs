//! Tree indexes over a dataset: an iSAX-style tree keyed by variable
//! cardinality SAX words and a DSTree-style tree over segment mean ranges.
//!
//! Both trees summarize a node by a per-segment interval that every stored
//! series' segment mean falls into. That interval is all the node-level lower
//! bounds need:
//!
//! * ED: `sqrt(sum_i w_i * gap(qbar_i, [lo_i, hi_i])^2)` with `w_i` the segment
//!   width, which lower bounds ED by per-segment mean contraction.
//! * DTW: the same sum with the gap taken between the summarized query
//!   envelope `[L_i, U_i]` and `[lo_i, hi_i]`, which lower bounds the
//!   per-series envelope bound and hence LB_Keogh and DTW.
//!
//! Trees are immutable after `build`; any number of searches may share one.

mod build;
mod persist;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use persist::{load_index, save_index, INDEX_MAGIC, INDEX_VERSION};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::search::{KnnAnswer, ProgressiveSearch, SearchConfig};
use crate::series::{build_envelope, DistanceKind, Envelope};
use crate::summaries::{summarize_envelope, symbol_interval, SegmentLayout, SummarizedEnvelope};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Isax,
    Dstree,
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isax" => Ok(IndexKind::Isax),
            "dstree" => Ok(IndexKind::Dstree),
            _ => Err(Error::invalid(format!("unknown index kind `{s}` (expected isax or dstree)"))),
        }
    }
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndexKind::Isax => "isax",
            IndexKind::Dstree => "dstree",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub kind: IndexKind,
    pub segments: usize,
    /// Maximum series per leaf, unless the series cannot be separated.
    pub leaf_threshold: usize,
    /// Per-segment SAX alphabet ceiling (iSAX only), a power of two.
    pub sax_max_cardinality: usize,
    pub distance: DistanceKind,
}

impl IndexConfig {
    pub fn new(kind: IndexKind) -> Self {
        Self {
            kind,
            segments: 16,
            leaf_threshold: 100,
            sax_max_cardinality: 256,
            distance: DistanceKind::Euclidean,
        }
    }

    pub fn with_leaf_threshold(mut self, th: usize) -> Self {
        self.leaf_threshold = th;
        self
    }

    pub fn with_segments(mut self, m: usize) -> Self {
        self.segments = m;
        self
    }

    pub fn with_distance(mut self, d: DistanceKind) -> Self {
        self.distance = d;
        self
    }
}

/// Per-segment bounds of every series stored under a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeSynopsis {
    /// SAX prefix per segment; `bits[i] == 0` leaves segment `i` unconstrained.
    Isax { symbols: Vec<u16>, bits: Vec<u8> },
    Dstree {
        mean_min: Vec<f64>,
        mean_max: Vec<f64>,
        stdev_min: Vec<f64>,
        stdev_max: Vec<f64>,
    },
}

impl NodeSynopsis {
    /// Interval `[lo, hi]` containing segment `i`'s mean for every series.
    #[inline]
    pub fn mean_bounds(&self, i: usize) -> (f64, f64) {
        match self {
            NodeSynopsis::Isax { symbols, bits } => symbol_interval(symbols[i], bits[i]),
            NodeSynopsis::Dstree { mean_min, mean_max, .. } => (mean_min[i], mean_max[i]),
        }
    }

    pub fn segment_count(&self) -> usize {
        match self {
            NodeSynopsis::Isax { symbols, .. } => symbols.len(),
            NodeSynopsis::Dstree { mean_min, .. } => mean_min.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeContent {
    Leaf { ids: Vec<u32> },
    Internal { children: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub synopsis: NodeSynopsis,
    pub content: NodeContent,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.content, NodeContent::Leaf { .. })
    }
}

#[derive(Debug, Clone)]
pub struct IndexTree {
    config: IndexConfig,
    layout: SegmentLayout,
    nodes: Vec<Node>,
    dataset: Arc<Dataset>,
    indexed: usize,
}

/// Query-side summaries matching a tree's segment layout.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub values: Vec<f64>,
    pub means: Vec<f64>,
    pub distance: DistanceKind,
    /// Envelope and its summary over the tree layout, DTW only.
    pub envelope: Option<(Envelope, SummarizedEnvelope)>,
}

impl QueryContext {
    pub fn new(query: &[f64], layout: &SegmentLayout, distance: DistanceKind) -> Result<Self> {
        if query.len() != layout.series_length() {
            return Err(Error::LengthMismatch {
                expected: layout.series_length(),
                actual: query.len(),
            });
        }
        let envelope = match distance {
            DistanceKind::Euclidean => None,
            DistanceKind::Dtw { band } => {
                let env = build_envelope(query, band)?;
                let senv = summarize_envelope(&env, layout)?;
                Some((env, senv))
            }
        };
        Ok(Self {
            values: query.to_vec(),
            means: layout.segment_means(query),
            distance,
            envelope,
        })
    }
}

/// Squared node lower bound for the query under its distance measure.
pub fn mindist_sq(query: &QueryContext, synopsis: &NodeSynopsis, layout: &SegmentLayout) -> f64 {
    let mut sum = 0.0;
    match &query.envelope {
        None => {
            for (i, w) in layout.lengths().enumerate() {
                let (lo, hi) = synopsis.mean_bounds(i);
                let q = query.means[i];
                let gap = if q < lo {
                    lo - q
                } else if q > hi {
                    q - hi
                } else {
                    0.0
                };
                sum += w as f64 * gap * gap;
            }
        }
        Some((_, senv)) => {
            for (i, w) in layout.lengths().enumerate() {
                let (lo, hi) = synopsis.mean_bounds(i);
                let u = senv.upper_hat[i];
                let l = senv.lower_hat[i];
                let term = if lo > u {
                    (lo - u) * (lo - u)
                } else if hi < l {
                    (l - hi) * (l - hi)
                } else {
                    0.0
                };
                sum += w as f64 * term;
            }
        }
    }
    sum
}

/// Node lower bound in distance units.
pub fn mindist(query: &QueryContext, synopsis: &NodeSynopsis, layout: &SegmentLayout) -> Result<f64> {
    if synopsis.segment_count() != layout.segment_count() || query.means.len() != layout.segment_count() {
        return Err(Error::LayoutMismatch(format!(
            "node has {} segments, layout {}, query {}",
            synopsis.segment_count(),
            layout.segment_count(),
            query.means.len()
        )));
    }
    Ok(mindist_sq(query, synopsis, layout).sqrt())
}

impl IndexTree {
    /// Indexes every series of the dataset.
    pub fn build(dataset: Arc<Dataset>, config: IndexConfig) -> Result<Self> {
        let ids: Vec<u32> = (0..dataset.n() as u32).collect();
        Self::build_subset(dataset, &ids, config)
    }

    /// Indexes only `ids`; other series stay invisible to searches.
    pub fn build_subset(dataset: Arc<Dataset>, ids: &[u32], config: IndexConfig) -> Result<Self> {
        build::build(dataset, ids, config)
    }

    pub(crate) fn from_parts(
        config: IndexConfig,
        layout: SegmentLayout,
        nodes: Vec<Node>,
        dataset: Arc<Dataset>,
    ) -> Result<Self> {
        let indexed = nodes
            .iter()
            .map(|n| match &n.content {
                NodeContent::Leaf { ids } => ids.len(),
                NodeContent::Internal { .. } => 0,
            })
            .sum();
        let tree = Self {
            config,
            layout,
            nodes,
            dataset,
            indexed,
        };
        tree.check_structure()?;
        Ok(tree)
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.dataset.n() as u32;
        for node in &self.nodes {
            if node.synopsis.segment_count() != self.layout.segment_count() {
                return Err(Error::IndexFormat("node synopsis does not match layout".into()));
            }
            match &node.content {
                NodeContent::Leaf { ids } => {
                    if ids.iter().any(|&id| id >= n) {
                        return Err(Error::IndexFormat("leaf references a series outside the dataset".into()));
                    }
                }
                NodeContent::Internal { children } => {
                    if children.iter().any(|&c| c as usize >= self.nodes.len() || c == 0) {
                        return Err(Error::IndexFormat("dangling child reference".into()));
                    }
                }
            }
        }
        if self.nodes.is_empty() {
            return Err(Error::IndexFormat("tree has no nodes".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn layout(&self) -> &SegmentLayout {
        &self.layout
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    /// Number of indexed series.
    pub fn len(&self) -> usize {
        self.indexed
    }

    pub fn is_empty(&self) -> bool {
        self.indexed == 0
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, &[u32])> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.content {
            NodeContent::Leaf { ids } => Some((i as NodeId, ids.as_slice())),
            NodeContent::Internal { .. } => None,
        })
    }

    /// Ids stored anywhere under `node`.
    pub fn subtree_ids(&self, node: NodeId) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            match &self.node(id).content {
                NodeContent::Leaf { ids } => out.extend_from_slice(ids),
                NodeContent::Internal { children } => stack.extend(children.iter().rev()),
            }
        }
        out
    }

    pub fn query_context(&self, query: &[f64], distance: DistanceKind) -> Result<QueryContext> {
        QueryContext::new(query, &self.layout, distance)
    }

    pub fn mindist(&self, query: &QueryContext, node: NodeId) -> f64 {
        mindist_sq(query, &self.node(node).synopsis, &self.layout).sqrt()
    }

    /// Leaf reached by descending to the child with the smallest lower bound
    /// at every level (ties to the earlier-created child).
    pub fn most_promising_leaf(&self, query: &QueryContext) -> NodeId {
        let mut current = self.root();
        loop {
            match &self.node(current).content {
                NodeContent::Leaf { .. } => return current,
                NodeContent::Internal { children } => {
                    current = *children
                        .iter()
                        .min_by(|&&a, &&b| {
                            let da = mindist_sq(query, &self.node(a).synopsis, &self.layout);
                            let db = mindist_sq(query, &self.node(b).synopsis, &self.layout);
                            da.total_cmp(&db).then(a.cmp(&b))
                        })
                        .expect("internal nodes have children");
                }
            }
        }
    }

    /// Best `k` candidates of the most promising leaf, padded from the next
    /// leaves in best-first order when that leaf holds fewer than `k`.
    pub fn approximate_search(&self, query: &[f64], k: usize, distance: DistanceKind) -> Result<KnnAnswer> {
        let config = SearchConfig::new(k, distance);
        let mut search = ProgressiveSearch::new(self, query, &config)?;
        while !search.is_full() && search.step()? {}
        Ok(search.answer())
    }
}
