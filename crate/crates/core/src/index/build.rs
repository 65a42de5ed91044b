use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::{IndexConfig, IndexKind, IndexTree, Node, NodeContent, NodeId, NodeSynopsis};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::summaries::{max_symbol, SegmentLayout, MAX_CARDINALITY, MAX_CARDINALITY_BITS};

pub(super) fn build(dataset: Arc<Dataset>, ids: &[u32], config: IndexConfig) -> Result<IndexTree> {
    let len = dataset.series_len();
    if config.leaf_threshold == 0 {
        return Err(Error::invalid("leaf threshold must be positive"));
    }
    if config.segments == 0 || config.segments > len {
        return Err(Error::invalid(format!(
            "cannot use {} segments for series of length {len}",
            config.segments
        )));
    }
    let card = config.sax_max_cardinality;
    if !(2..=MAX_CARDINALITY).contains(&card) || !card.is_power_of_two() {
        return Err(Error::invalid(format!(
            "SAX cardinality must be a power of two in [2, {MAX_CARDINALITY}], got {card}"
        )));
    }
    if let crate::series::DistanceKind::Dtw { band } = config.distance {
        if band >= len {
            return Err(Error::invalid(format!("DTW band {band} must be below the series length {len}")));
        }
    }

    let mut ids = ids.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate series id in index subset"));
    }
    if let Some(&last) = ids.last() {
        if last as usize >= dataset.n() {
            return Err(Error::invalid(format!("series id {last} is outside the dataset")));
        }
    }

    let layout = SegmentLayout::spread(len, config.segments)?;
    let m = layout.segment_count();
    let means: Vec<f64> = ids
        .par_iter()
        .flat_map_iter(|&id| layout.segment_means(dataset.series(id)))
        .collect();

    let nodes = match config.kind {
        IndexKind::Isax => {
            let fine: Vec<u16> = means.iter().map(|&x| max_symbol(x)).collect();
            let mut b = IsaxBuilder {
                fine: &fine,
                ids: &ids,
                m,
                threshold: config.leaf_threshold,
                max_bits: card.trailing_zeros() as u8,
                nodes: Vec::new(),
            };
            b.root();
            b.nodes
        }
        IndexKind::Dstree => {
            let stdevs: Vec<f64> = ids
                .par_iter()
                .flat_map_iter(|&id| segment_stdevs(dataset.series(id), &layout))
                .collect();
            let mut b = DstreeBuilder {
                means: &means,
                stdevs: &stdevs,
                ids: &ids,
                m,
                threshold: config.leaf_threshold,
                nodes: Vec::new(),
            };
            b.node((0..ids.len()).collect());
            b.nodes
        }
    };
    IndexTree::from_parts(config, layout, nodes, dataset)
}

fn segment_stdevs(values: &[f64], layout: &SegmentLayout) -> Vec<f64> {
    layout
        .ranges()
        .map(|r| {
            let seg = &values[r];
            let w = seg.len() as f64;
            let mean = seg.iter().sum::<f64>() / w;
            (seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w).sqrt()
        })
        .collect()
}

fn placeholder(m: usize) -> Node {
    Node {
        synopsis: NodeSynopsis::Isax {
            symbols: vec![0; m],
            bits: vec![0; m],
        },
        content: NodeContent::Leaf { ids: Vec::new() },
    }
}

struct IsaxBuilder<'a> {
    /// Row-major `members x m` symbols at the maximum cardinality.
    fine: &'a [u16],
    ids: &'a [u32],
    m: usize,
    threshold: usize,
    max_bits: u8,
    nodes: Vec<Node>,
}

impl IsaxBuilder<'_> {
    fn symbol_prefix(&self, member: usize, seg: usize, bits: u8) -> u16 {
        self.fine[member * self.m + seg] >> (MAX_CARDINALITY_BITS - bits)
    }

    fn root(&mut self) {
        let members: Vec<usize> = (0..self.ids.len()).collect();
        if members.len() <= self.threshold {
            self.node(vec![0; self.m], vec![0; self.m], members, 0);
            return;
        }
        self.nodes.push(placeholder(self.m));
        let mut groups: BTreeMap<Vec<u16>, Vec<usize>> = BTreeMap::new();
        for member in members {
            let word = (0..self.m).map(|s| self.symbol_prefix(member, s, 1)).collect();
            groups.entry(word).or_default().push(member);
        }
        let children = groups
            .into_iter()
            .map(|(word, group)| self.node(word, vec![1; self.m], group, 0))
            .collect();
        self.nodes[0] = Node {
            synopsis: NodeSynopsis::Isax {
                symbols: vec![0; self.m],
                bits: vec![0; self.m],
            },
            content: NodeContent::Internal { children },
        };
    }

    /// Splits one segment at a time, round robin from `next`. A segment whose
    /// next bit is shared by every member cannot separate them, so the node
    /// absorbs that bit into its own word and moves on.
    fn node(&mut self, mut symbols: Vec<u16>, mut bits: Vec<u8>, members: Vec<usize>, next: usize) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(placeholder(self.m));
        let mut seg = next % self.m;
        let mut stalled = 0;
        let content = loop {
            if members.len() <= self.threshold || stalled == self.m {
                break NodeContent::Leaf {
                    ids: members.iter().map(|&i| self.ids[i]).collect(),
                };
            }
            if bits[seg] >= self.max_bits {
                stalled += 1;
                seg = (seg + 1) % self.m;
                continue;
            }
            stalled = 0;
            let b = bits[seg] + 1;
            let (zero, one): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|&&i| self.symbol_prefix(i, seg, b) & 1 == 0);
            let parent = symbols[seg] << 1;
            if zero.is_empty() || one.is_empty() {
                symbols[seg] = parent | u16::from(zero.is_empty());
                bits[seg] = b;
                seg = (seg + 1) % self.m;
                continue;
            }
            let after = (seg + 1) % self.m;
            let mut children = Vec::with_capacity(2);
            for (bit, group) in [(0u16, zero), (1u16, one)] {
                let mut s = symbols.clone();
                let mut bt = bits.clone();
                s[seg] = parent | bit;
                bt[seg] = b;
                children.push(self.node(s, bt, group, after));
            }
            break NodeContent::Internal { children };
        };
        self.nodes[id as usize] = Node {
            synopsis: NodeSynopsis::Isax { symbols, bits },
            content,
        };
        id
    }
}

struct DstreeBuilder<'a> {
    means: &'a [f64],
    stdevs: &'a [f64],
    ids: &'a [u32],
    m: usize,
    threshold: usize,
    nodes: Vec<Node>,
}

impl DstreeBuilder<'_> {
    fn synopsis(&self, members: &[usize]) -> NodeSynopsis {
        let m = self.m;
        let mut mean_min = vec![f64::INFINITY; m];
        let mut mean_max = vec![f64::NEG_INFINITY; m];
        let mut stdev_min = vec![f64::INFINITY; m];
        let mut stdev_max = vec![f64::NEG_INFINITY; m];
        for &i in members {
            for s in 0..m {
                let mu = self.means[i * m + s];
                let sd = self.stdevs[i * m + s];
                mean_min[s] = mean_min[s].min(mu);
                mean_max[s] = mean_max[s].max(mu);
                stdev_min[s] = stdev_min[s].min(sd);
                stdev_max[s] = stdev_max[s].max(sd);
            }
        }
        if members.is_empty() {
            mean_min.fill(0.0);
            mean_max.fill(0.0);
            stdev_min.fill(0.0);
            stdev_max.fill(0.0);
        }
        NodeSynopsis::Dstree {
            mean_min,
            mean_max,
            stdev_min,
            stdev_max,
        }
    }

    /// Splits on the segment with the widest mean range at its midpoint,
    /// falling back to narrower segments if rounding leaves one side empty.
    fn node(&mut self, members: Vec<usize>) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(placeholder(self.m));
        let synopsis = self.synopsis(&members);
        let mut content = None;
        if members.len() > self.threshold {
            let NodeSynopsis::Dstree { mean_min, mean_max, .. } = &synopsis else {
                unreachable!()
            };
            let mut order: Vec<usize> = (0..self.m).filter(|&s| mean_max[s] > mean_min[s]).collect();
            order.sort_by(|&a, &b| {
                (mean_max[b] - mean_min[b])
                    .total_cmp(&(mean_max[a] - mean_min[a]))
                    .then(a.cmp(&b))
            });
            for s in order {
                let mid = mean_min[s] + (mean_max[s] - mean_min[s]) / 2.0;
                let (lo, hi): (Vec<usize>, Vec<usize>) =
                    members.iter().partition(|&&i| self.means[i * self.m + s] < mid);
                if lo.is_empty() || hi.is_empty() {
                    continue;
                }
                let a = self.node(lo);
                let b = self.node(hi);
                content = Some(NodeContent::Internal { children: vec![a, b] });
                break;
            }
        }
        let content = content.unwrap_or_else(|| NodeContent::Leaf {
            ids: members.iter().map(|&i| self.ids[i]).collect(),
        });
        self.nodes[id as usize] = Node { synopsis, content };
        id
    }
}
