//! Binary index files.
//!
//! Layout: magic, format version byte, little-endian payload length (u64),
//! payload, CRC32 of everything before the checksum. The payload stores the
//! build configuration, the segment layout and the node arena. Series values
//! are not stored; loading takes the dataset the index was built over.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{IndexConfig, IndexKind, IndexTree, Node, NodeContent, NodeSynopsis};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::series::DistanceKind;
use crate::summaries::SegmentLayout;

pub const INDEX_MAGIC: &[u8; 8] = b"PROSIDX1";
pub const INDEX_VERSION: u8 = 1;

pub fn save_index(tree: &IndexTree, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(tree);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>, dataset: Arc<Dataset>) -> Result<IndexTree> {
    let bytes = fs::read(path)?;
    decode(&bytes, dataset)
}

pub(crate) fn encode(tree: &IndexTree) -> Vec<u8> {
    let mut p = Writer::default();
    let c = &tree.config;
    p.u8(match c.kind {
        IndexKind::Isax => 0,
        IndexKind::Dstree => 1,
    });
    p.u64(c.segments as u64);
    p.u64(c.leaf_threshold as u64);
    p.u64(c.sax_max_cardinality as u64);
    match c.distance {
        DistanceKind::Euclidean => {
            p.u8(0);
            p.u64(0);
        }
        DistanceKind::Dtw { band } => {
            p.u8(1);
            p.u64(band as u64);
        }
    }
    p.u64(tree.dataset.n() as u64);
    p.u64(tree.dataset.series_len() as u64);
    p.u64(tree.layout.segment_count() as u64);
    for &e in tree.layout.endpoints() {
        p.u64(e as u64);
    }
    p.u64(tree.nodes.len() as u64);
    for node in &tree.nodes {
        match &node.synopsis {
            NodeSynopsis::Isax { symbols, bits } => {
                p.u8(0);
                for (&s, &b) in symbols.iter().zip(bits) {
                    p.u16(s);
                    p.u8(b);
                }
            }
            NodeSynopsis::Dstree {
                mean_min,
                mean_max,
                stdev_min,
                stdev_max,
            } => {
                p.u8(1);
                for v in [mean_min, mean_max, stdev_min, stdev_max] {
                    for &x in v {
                        p.f64(x);
                    }
                }
            }
        }
        match &node.content {
            NodeContent::Leaf { ids } => {
                p.u8(0);
                p.u64(ids.len() as u64);
                ids.iter().for_each(|&i| p.u32(i));
            }
            NodeContent::Internal { children } => {
                p.u8(1);
                p.u64(children.len() as u64);
                children.iter().for_each(|&i| p.u32(i));
            }
        }
    }

    let mut out = Vec::with_capacity(p.0.len() + 21);
    out.extend_from_slice(INDEX_MAGIC);
    out.push(INDEX_VERSION);
    out.extend_from_slice(&(p.0.len() as u64).to_le_bytes());
    out.extend_from_slice(&p.0);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn decode(bytes: &[u8], dataset: Arc<Dataset>) -> Result<IndexTree> {
    let bad = |m: &str| Error::IndexFormat(m.to_string());
    if bytes.len() < 8 + 1 + 8 + 4 || &bytes[..8] != INDEX_MAGIC {
        return Err(bad("not an index file (bad magic)"));
    }
    if bytes[8] != INDEX_VERSION {
        return Err(Error::IndexFormat(format!("unsupported format version {}", bytes[8])));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch"));
    }
    let plen = u64::from_le_bytes(body[9..17].try_into().expect("8 bytes")) as usize;
    if plen != body.len() - 17 {
        return Err(bad("payload length mismatch"));
    }
    let mut r = Reader { buf: &body[17..], pos: 0 };

    let kind = match r.u8()? {
        0 => IndexKind::Isax,
        1 => IndexKind::Dstree,
        k => return Err(Error::IndexFormat(format!("unknown index kind tag {k}"))),
    };
    let segments = r.usize()?;
    let leaf_threshold = r.usize()?;
    let sax_max_cardinality = r.usize()?;
    let distance = match (r.u8()?, r.usize()?) {
        (0, _) => DistanceKind::Euclidean,
        (1, band) => DistanceKind::Dtw { band },
        (t, _) => return Err(Error::IndexFormat(format!("unknown distance tag {t}"))),
    };
    let n = r.usize()?;
    let len = r.usize()?;
    if n != dataset.n() || len != dataset.series_len() {
        return Err(Error::IndexFormat(format!(
            "index was built over {n} series of length {len}, dataset has {} of length {}",
            dataset.n(),
            dataset.series_len()
        )));
    }
    let m = r.usize()?;
    if m != segments || m > len {
        return Err(bad("segment count mismatch"));
    }
    let endpoints = (0..m).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let layout = SegmentLayout::new(endpoints).map_err(|e| Error::IndexFormat(e.to_string()))?;
    if layout.series_length() != len {
        return Err(bad("layout does not cover the series"));
    }

    let count = r.usize()?;
    let mut nodes = Vec::with_capacity(count.min(r.remaining()));
    for _ in 0..count {
        let synopsis = match r.u8()? {
            0 => {
                let mut symbols = Vec::with_capacity(m);
                let mut bits = Vec::with_capacity(m);
                for _ in 0..m {
                    let s = r.u16()?;
                    let b = r.u8()?;
                    if b > crate::summaries::MAX_CARDINALITY_BITS || (b < 16 && s >> b != 0) {
                        return Err(bad("SAX symbol out of range"));
                    }
                    symbols.push(s);
                    bits.push(b);
                }
                NodeSynopsis::Isax { symbols, bits }
            }
            1 => {
                let mut read = || (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>();
                NodeSynopsis::Dstree {
                    mean_min: read()?,
                    mean_max: read()?,
                    stdev_min: read()?,
                    stdev_max: read()?,
                }
            }
            t => return Err(Error::IndexFormat(format!("unknown synopsis tag {t}"))),
        };
        let tag = r.u8()?;
        let k = r.usize()?;
        if k > r.remaining() / 4 {
            return Err(bad("truncated node"));
        }
        let list = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let content = match tag {
            0 => NodeContent::Leaf { ids: list },
            1 => NodeContent::Internal { children: list },
            t => return Err(Error::IndexFormat(format!("unknown node tag {t}"))),
        };
        nodes.push(Node { synopsis, content });
    }
    if r.remaining() != 0 {
        return Err(bad("trailing bytes after node table"));
    }
    let config = IndexConfig {
        kind,
        segments,
        leaf_threshold,
        sax_max_cardinality,
        distance,
    };
    IndexTree::from_parts(config, layout, nodes, dataset)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::IndexFormat("unexpected end of payload".into()))?;
        self.pos = end;
        Ok(s.try_into().expect("slice of length N"))
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take()?);
        usize::try_from(v).map_err(|_| Error::IndexFormat("size field overflows".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}
