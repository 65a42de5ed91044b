//! Dataset storage, on-disk format, synthetic generators and pool sampling.
//!
//! Raw files are row-major little-endian `f32` with no header. A JSON
//! descriptor sidecar carries `n`, `len`, the optional label file and the
//! generator provenance; it is the single source of truth for the shape and
//! is checked against the raw file size on open.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::z_normalize;

/// Series collection held in memory as one contiguous row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    len: usize,
    values: Vec<f64>,
    labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let len = rows.first().map(Vec::len).unwrap_or(0);
        if len == 0 {
            return Err(Error::Dataset("dataset must contain non-empty series".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * len);
        for row in rows {
            if row.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: row.len(),
                });
            }
            values.extend(row);
        }
        Ok(Self {
            len,
            values,
            labels: None,
        })
    }

    pub fn from_flat(len: usize, values: Vec<f64>) -> Result<Self> {
        if len == 0 || values.is_empty() || values.len() % len != 0 {
            return Err(Error::Dataset(format!(
                "{} values do not form rows of length {len}",
                values.len()
            )));
        }
        Ok(Self {
            len,
            values,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Dataset(format!(
                "{} labels for {} series",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Number of series.
    pub fn n(&self) -> usize {
        self.values.len() / self.len
    }

    /// Series length.
    pub fn series_len(&self) -> usize {
        self.len
    }

    pub fn series(&self, id: u32) -> &[f64] {
        let start = id as usize * self.len;
        &self.values[start..start + self.len]
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        ((id as usize) < self.n()).then(|| self.series(id))
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn label(&self, id: u32) -> Option<u32> {
        self.labels.as_ref().map(|l| l[id as usize])
    }

    pub fn class_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m as usize + 1))
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.len)
    }

    /// Copy of the given rows, in the given order.
    pub fn subset(&self, ids: &[u32]) -> Dataset {
        let mut values = Vec::with_capacity(ids.len() * self.len);
        for &id in ids {
            values.extend_from_slice(self.series(id));
        }
        Dataset {
            len: self.len,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| ids.iter().map(|&id| l[id as usize]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    RandomWalk {
        seed: u64,
    },
    Cbf {
        seed: u64,
        amplitude: f64,
        class_probs: Vec<f64>,
    },
    External,
}

/// JSON sidecar describing a raw series file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    /// Raw file, relative to the descriptor's directory.
    pub data: String,
    pub n: usize,
    pub len: usize,
    #[serde(default)]
    pub labels: Option<String>,
    pub normalized: bool,
    pub provenance: Provenance,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetDescriptor {
    pub fn data_path(&self) -> PathBuf {
        self.base_dir.join(&self.data)
    }

    pub fn label_path(&self) -> Option<PathBuf> {
        self.labels.as_ref().map(|l| self.base_dir.join(l))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut desc: DatasetDescriptor = serde_json::from_slice(&fs::read(path)?)?;
        desc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        desc.validate()?;
        Ok(desc)
    }

    fn validate(&self) -> Result<()> {
        let size = fs::metadata(self.data_path())?.len();
        let expected = 4 * self.n as u64 * self.len as u64;
        if size != expected {
            return Err(Error::Dataset(format!(
                "{} holds {size} bytes but the descriptor declares {} x {} series ({expected} bytes)",
                self.data_path().display(),
                self.n,
                self.len
            )));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Dataset> {
        let mut bytes = Vec::with_capacity(4 * self.n * self.len);
        File::open(self.data_path())?.read_to_end(&mut bytes)?;
        let values = decode_f32(&bytes);
        let dataset = Dataset::from_flat(self.len, values)?;
        match self.label_path() {
            Some(p) => dataset.with_labels(read_labels(&p)?),
            None => Ok(dataset),
        }
    }

    pub fn read_series(&self, id: usize) -> Result<Vec<f64>> {
        if id >= self.n {
            return Err(Error::Dataset(format!("series {id} out of range (n = {})", self.n)));
        }
        let mut file = File::open(self.data_path())?;
        file.seek(SeekFrom::Start((id * self.len * 4) as u64))?;
        let mut buf = vec![0u8; self.len * 4];
        file.read_exact(&mut buf)?;
        Ok(decode_f32(&buf))
    }

    /// Streams every series in id order.
    pub fn stream(&self) -> Result<SeriesStream> {
        Ok(SeriesStream {
            reader: BufReader::new(File::open(self.data_path())?),
            remaining: self.n,
            buf: vec![0u8; self.len * 4],
        })
    }
}

pub struct SeriesStream {
    reader: BufReader<File>,
    remaining: usize,
    buf: Vec<u8>,
}

impl Iterator for SeriesStream {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(
            self.reader
                .read_exact(&mut self.buf)
                .map(|_| decode_f32(&self.buf))
                .map_err(Error::from),
        )
    }
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

fn read_labels(path: &Path) -> Result<Vec<u32>> {
    BufReader::new(File::open(path)?)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line?;
            line.trim()
                .parse::<u32>()
                .map_err(|_| Error::Dataset(format!("{}:{}: bad label `{line}`", path.display(), i + 1)))
        })
        .collect()
}

/// Writes `<stem>.bin`, optional `<stem>.labels` and the `<stem>.json`
/// descriptor. Values are stored as `f32`.
pub fn write_dataset(
    dataset: &Dataset,
    stem: impl AsRef<Path>,
    normalized: bool,
    provenance: Provenance,
) -> Result<DatasetDescriptor> {
    let stem = stem.as_ref();
    let base_dir = stem.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = stem
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Dataset(format!("bad dataset path {}", stem.display())))?;
    if !base_dir.as_os_str().is_empty() {
        fs::create_dir_all(&base_dir)?;
    }
    let data = format!("{name}.bin");
    let mut w = BufWriter::new(File::create(base_dir.join(&data))?);
    for v in &dataset.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let labels = match dataset.labels() {
        Some(labels) => {
            let file = format!("{name}.labels");
            let mut w = BufWriter::new(File::create(base_dir.join(&file))?);
            for l in labels {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
            Some(file)
        }
        None => None,
    };
    let desc = DatasetDescriptor {
        data,
        n: dataset.n(),
        len: dataset.series_len(),
        labels,
        normalized,
        provenance,
        base_dir: base_dir.clone(),
    };
    fs::write(base_dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&desc)?)?;
    Ok(desc)
}

fn series_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Values as they read back from disk.
fn quantize(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|v| v as f32 as f64).collect()
}

/// Cumulative sums of standard Gaussian steps, before normalization.
pub fn raw_random_walk(len: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = series_rng(seed, index);
    let mut acc = 0.0;
    (0..len)
        .map(|_| {
            let step: f64 = StandardNormal.sample(&mut rng);
            acc += step;
            acc
        })
        .collect()
}

/// Series `index` of the random-walk dataset generated from `seed`,
/// z-normalized.
pub fn random_walk_values(len: usize, seed: u64, index: usize) -> Vec<f64> {
    z_normalize(&raw_random_walk(len, seed, index)).expect("random walk values are finite")
}

pub fn random_walk_dataset(n: usize, len: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || len < 2 {
        return Err(Error::invalid(format!("random walk needs n >= 1 and len >= 2, got {n} x {len}")));
    }
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| quantize(random_walk_values(len, seed, i)))
        .collect();
    Dataset::from_flat(len, rows)
}

pub fn generate_random_walk(stem: impl AsRef<Path>, n: usize, len: usize, seed: u64) -> Result<DatasetDescriptor> {
    let ds = random_walk_dataset(n, len, seed)?;
    write_dataset(&ds, stem, true, Provenance::RandomWalk { seed })
}

pub const CBF_CYLINDER: u32 = 0;
pub const CBF_BELL: u32 = 1;
pub const CBF_FUNNEL: u32 = 2;

/// One Cylinder-Bell-Funnel series before normalization.
///
/// Onset `a` is uniform on `[len/8, len/4]`, duration `b - a` uniform on
/// `[len/4, 3len/4]` (the classic 16/32/96 constants at length 128). The
/// shape height is `amplitude * (6 + eta) / 6` with `eta ~ N(0, 1)`, so
/// `amplitude = 6` gives the classic generator; unit Gaussian noise is
/// added to every point.
pub fn cbf_values(len: usize, class: u32, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let l = len as f64;
    let a = rng.random_range(l / 8.0..=l / 4.0);
    let b = a + rng.random_range(l / 4.0..=3.0 * l / 4.0);
    let eta: f64 = StandardNormal.sample(rng);
    let height = amplitude * (6.0 + eta) / 6.0;
    (0..len)
        .map(|i| {
            let t = (i + 1) as f64;
            let inside = t >= a && t <= b;
            let shape = if !inside {
                0.0
            } else {
                match class {
                    CBF_CYLINDER => 1.0,
                    CBF_BELL => (t - a) / (b - a),
                    _ => (b - t) / (b - a),
                }
            };
            let noise: f64 = StandardNormal.sample(rng);
            height * shape + noise
        })
        .collect()
}

pub fn cbf_dataset(n: usize, len: usize, amplitude: f64, class_probs: &[f64], seed: u64) -> Result<Dataset> {
    if class_probs.len() != 3 || class_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("CBF needs three class probabilities in [0, 1]"));
    }
    if (class_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("CBF class probabilities must sum to 1"));
    }
    if !(amplitude > 0.0) {
        return Err(Error::invalid("CBF amplitude must be positive"));
    }
    if n == 0 || len < 8 {
        return Err(Error::invalid("CBF needs n >= 1 and len >= 8"));
    }
    let rows: Vec<(u32, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = series_rng(seed, i);
            let u: f64 = rng.random();
            let class = if u < class_probs[0] {
                CBF_CYLINDER
            } else if u < class_probs[0] + class_probs[1] {
                CBF_BELL
            } else {
                CBF_FUNNEL
            };
            let raw = cbf_values(len, class, amplitude, &mut rng);
            (class, quantize(z_normalize(&raw).expect("CBF values are finite")))
        })
        .collect();
    let labels = rows.iter().map(|(c, _)| *c).collect();
    let values = rows.into_iter().flat_map(|(_, v)| v).collect();
    Dataset::from_flat(len, values)?.with_labels(labels)
}

pub fn generate_cbf(
    stem: impl AsRef<Path>,
    n: usize,
    len: usize,
    amplitude: f64,
    class_probs: &[f64],
    seed: u64,
) -> Result<DatasetDescriptor> {
    let ds = cbf_dataset(n, len, amplitude, class_probs, seed)?;
    write_dataset(
        &ds,
        stem,
        true,
        Provenance::Cbf {
            seed,
            amplitude,
            class_probs: class_probs.to_vec(),
        },
    )
}

/// Two disjoint id pools: witnesses are drawn from the first, training and
/// testing queries from the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSplit {
    pub witness_pool: Vec<u32>,
    pub query_pool: Vec<u32>,
}

/// One repetition's draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub witnesses: Vec<u32>,
    pub training: Vec<u32>,
    pub testing: Vec<u32>,
}

pub fn sample_pools(n: usize, witness_pool: usize, query_pool: usize, seed: u64) -> Result<PoolSplit> {
    if witness_pool + query_pool > n {
        return Err(Error::invalid(format!(
            "pools of {witness_pool} + {query_pool} do not fit in {n} series"
        )));
    }
    let mut ids: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = ids.partial_shuffle(&mut rng, witness_pool + query_pool);
    let mut witness: Vec<u32> = chosen[..witness_pool].to_vec();
    let mut query: Vec<u32> = chosen[witness_pool..].to_vec();
    witness.sort_unstable();
    query.sort_unstable();
    Ok(PoolSplit {
        witness_pool: witness,
        query_pool: query,
    })
}

impl PoolSplit {
    /// Draws witnesses from the witness pool and disjoint training/testing
    /// sets from the query pool. Returned ids keep their draw order.
    pub fn draw(&self, witnesses: usize, training: usize, testing: usize, seed: u64) -> Result<Draw> {
        if witnesses > self.witness_pool.len() {
            return Err(Error::invalid(format!(
                "cannot draw {witnesses} witnesses from a pool of {}",
                self.witness_pool.len()
            )));
        }
        if training + testing > self.query_pool.len() {
            return Err(Error::invalid(format!(
                "cannot draw {training} training + {testing} testing queries from a pool of {}",
                self.query_pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = self.witness_pool.clone();
        let (w, _) = w.partial_shuffle(&mut rng, witnesses);
        let mut q = self.query_pool.clone();
        let (q, _) = q.partial_shuffle(&mut rng, training + testing);
        Ok(Draw {
            witnesses: w.to_vec(),
            training: q[..training].to_vec(),
            testing: q[training..].to_vec(),
        })
    }

    /// Ids in neither pool, ascending.
    pub fn remainder(&self, n: usize) -> Vec<u32> {
        let mut taken = vec![false; n];
        for &id in self.witness_pool.iter().chain(&self.query_pool) {
            taken[id as usize] = true;
        }
        (0..n as u32).filter(|&i| !taken[i as usize]).collect()
    }
}
