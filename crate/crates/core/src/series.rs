//! Series representation, z-normalization, Euclidean distance, banded DTW
//! and the query envelope behind every DTW lower bound.
//!
//! Distances are computed in squared space internally and compared there
//! during search, so that pruning decisions and the brute-force oracle see
//! bit-identical values. The public distance functions return the root.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance floor below which a series is treated as constant.
pub const ZNORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSeries {
    pub id: u64,
    pub values: Vec<f64>,
}

impl DataSeries {
    pub fn new(id: u64, values: Vec<f64>) -> Result<Self> {
        validate(&values)?;
        Ok(Self { id, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z_normalized(&self) -> Result<Self> {
        Ok(Self {
            id: self.id,
            values: z_normalize(&self.values)?,
        })
    }
}

fn validate(values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "series length must be at least 2, got {}",
            values.len()
        )));
    }
    if let Some(position) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { position });
    }
    Ok(())
}

/// The distance measure used by a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DistanceKind {
    Euclidean,
    /// Sakoe-Chiba constrained DTW with half-width `band` points.
    Dtw { band: usize },
}

impl DistanceKind {
    /// Band radius covering `fraction` of the series length, rounded up.
    pub fn dtw_fraction(len: usize, fraction: f64) -> Self {
        DistanceKind::Dtw {
            band: (len as f64 * fraction).ceil() as usize,
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match *self {
            DistanceKind::Euclidean => euclidean(a, b),
            DistanceKind::Dtw { band } => dtw(a, b, band),
        }
    }

    pub(crate) fn distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            DistanceKind::Euclidean => squared_euclidean(a, b, f64::INFINITY).unwrap_or(f64::INFINITY),
            DistanceKind::Dtw { band } => dtw_sq(a, b, band, f64::INFINITY).unwrap_or(f64::INFINITY),
        }
    }
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceKind::Euclidean => write!(f, "ed"),
            DistanceKind::Dtw { band } => write!(f, "dtw:{band}"),
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ed" | "euclidean" => Ok(DistanceKind::Euclidean),
            _ => {
                let band = s
                    .strip_prefix("dtw:")
                    .and_then(|r| r.parse::<usize>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown distance `{s}` (expected ed or dtw:<radius>)")))?;
                Ok(DistanceKind::Dtw { band })
            }
        }
    }
}

/// Z-normalizes with the population standard deviation. Constant series map
/// to all zeros.
pub fn z_normalize(values: &[f64]) -> Result<Vec<f64>> {
    validate(values)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < ZNORM_EPSILON {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(squared_euclidean(a, b, f64::INFINITY)
        .expect("unbounded distance never abandons")
        .sqrt())
}

/// Sequential sum of squared differences. Returns `None` as soon as the
/// partial sum exceeds `bound_sq`; a completed sum is identical to the
/// unbounded one.
#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64], bound_sq: f64) -> Option<f64> {
    let mut sum = 0.0;
    for (chunk_a, chunk_b) in a.chunks(16).zip(b.chunks(16)) {
        for (x, y) in chunk_a.iter().zip(chunk_b) {
            let d = x - y;
            sum += d * d;
        }
        if sum > bound_sq {
            return None;
        }
    }
    Some(sum)
}

/// Banded DTW in the same units as [`euclidean`]: the root of the summed
/// squared differences along the cheapest warping path.
pub fn dtw(a: &[f64], b: &[f64], band_radius: usize) -> Result<f64> {
    check_len(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    if band_radius >= a.len() {
        return Err(Error::invalid(format!(
            "band radius {band_radius} must be below series length {}",
            a.len()
        )));
    }
    Ok(dtw_sq(a, b, band_radius, f64::INFINITY)
        .expect("unbounded distance never abandons")
        .sqrt())
}

/// Squared banded DTW with early abandoning once every cell of a row exceeds
/// `bound_sq`.
pub(crate) fn dtw_sq(a: &[f64], b: &[f64], band: usize, bound_sq: f64) -> Option<f64> {
    let n = a.len();
    if n == 0 {
        return Some(0.0);
    }
    let band = band.min(n - 1);
    let mut prev = vec![f64::INFINITY; n];
    let mut curr = vec![f64::INFINITY; n];
    for i in 0..n {
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(n - 1);
        // One cell of margin on each side so the next row reads unreachable
        // cells outside this row's band.
        for v in &mut curr[lo.saturating_sub(1)..=(hi + 1).min(n - 1)] {
            *v = f64::INFINITY;
        }
        let mut row_min = f64::INFINITY;
        for j in lo..=hi {
            let d = a[i] - b[j];
            let cost = d * d;
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > lo { curr[j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            curr[j] = best + cost;
            row_min = row_min.min(curr[j]);
        }
        if row_min > bound_sq {
            return None;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Some(prev[n - 1])
}

/// Upper and lower envelope of a query over a Sakoe-Chiba band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub band_radius: usize,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }
}

/// Running max/min over `[j - r, j + r]` using monotonic deques, linear in
/// the series length.
pub fn build_envelope(query: &[f64], band_radius: usize) -> Result<Envelope> {
    let n = query.len();
    if n > 0 && band_radius >= n {
        return Err(Error::invalid(format!(
            "band radius {band_radius} must be below series length {n}"
        )));
    }
    let mut upper = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for j in 0..n {
        let right = (j + band_radius).min(n - 1);
        while next <= right {
            while maxq.back().is_some_and(|&b| query[b] <= query[next]) {
                maxq.pop_back();
            }
            maxq.push_back(next);
            while minq.back().is_some_and(|&b| query[b] >= query[next]) {
                minq.pop_back();
            }
            minq.push_back(next);
            next += 1;
        }
        let left = j.saturating_sub(band_radius);
        while maxq.front().is_some_and(|&f| f < left) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&f| f < left) {
            minq.pop_front();
        }
        upper.push(query[*maxq.front().expect("window is never empty")]);
        lower.push(query[*minq.front().expect("window is never empty")]);
    }
    Ok(Envelope {
        upper,
        lower,
        band_radius,
    })
}

pub fn lb_keogh(env: &Envelope, candidate: &[f64]) -> Result<f64> {
    if env.len() != candidate.len() {
        return Err(Error::LengthMismatch {
            expected: env.len(),
            actual: candidate.len(),
        });
    }
    Ok(lb_keogh_sq(env, candidate).sqrt())
}

#[inline]
pub(crate) fn lb_keogh_sq(env: &Envelope, candidate: &[f64]) -> f64 {
    let mut sum = 0.0;
    for ((&c, &u), &l) in candidate.iter().zip(&env.upper).zip(&env.lower) {
        if c > u {
            sum += (c - u) * (c - u);
        } else if c < l {
            sum += (l - c) * (l - c);
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut acc = 0.0;
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                acc += rng.random::<f64>() - 0.5;
                acc
            })
            .collect();
        z_normalize(&raw).unwrap()
    }

    // Unconstrained-capable O(n^2) DP on a full matrix.
    fn dtw_full_matrix(a: &[f64], b: &[f64], band: usize) -> f64 {
        let n = a.len();
        let mut m = vec![vec![f64::INFINITY; n + 1]; n + 1];
        m[0][0] = 0.0;
        for i in 1..=n {
            for j in 1..=n {
                if i.abs_diff(j) > band {
                    continue;
                }
                let d = (a[i - 1] - b[j - 1]).powi(2);
                m[i][j] = d + m[i - 1][j - 1].min(m[i - 1][j]).min(m[i][j - 1]);
            }
        }
        m[n][n].sqrt()
    }

    fn naive_envelope(q: &[f64], r: usize) -> (Vec<f64>, Vec<f64>) {
        let n = q.len();
        (0..n)
            .map(|j| {
                let w = &q[j.saturating_sub(r)..=(j + r).min(n - 1)];
                (
                    w.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    w.iter().cloned().fold(f64::INFINITY, f64::min),
                )
            })
            .unzip()
    }

    #[test]
    fn z_normalize_examples() {
        let z = z_normalize(&[1.0, 2.0, 3.0]).unwrap();
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expect).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - expect).abs() < 1e-12);
        assert!((z[2] - 1.2247).abs() < 1e-4);
        assert_eq!(z_normalize(&[5.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(z_normalize(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(z_normalize(&[1.0, f64::NAN]), Err(Error::NonFinite { position: 1 })));
        assert!(z_normalize(&[1.0]).is_err());
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]).unwrap(), 5.0);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(euclidean(&x, &x).unwrap(), 0.0);
        assert!(matches!(euclidean(&[0.0], &[0.0, 1.0]), Err(Error::LengthMismatch { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for i in 0..64 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((euclidean(&a, &b).unwrap() - acc.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_walk(&mut rng, 40);
            let b = random_walk(&mut rng, 40);
            // Degenerate band reproduces ED bit for bit.
            assert_eq!(dtw(&a, &b, 0).unwrap(), euclidean(&a, &b).unwrap());
            let full = dtw(&a, &b, 39).unwrap();
            assert!((full - dtw_full_matrix(&a, &b, usize::MAX)).abs() < 1e-9);
            let banded = dtw(&a, &b, 5).unwrap();
            assert!((banded - dtw_full_matrix(&a, &b, 5)).abs() < 1e-9);
        }
        assert!(dtw(&[0.0, 1.0], &[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn dtw_abandon_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_walk(&mut rng, 32);
            let b = random_walk(&mut rng, 32);
            let exact = dtw_sq(&a, &b, 4, f64::INFINITY).unwrap();
            assert_eq!(dtw_sq(&a, &b, 4, exact), Some(exact));
            let bounded = dtw_sq(&a, &b, 4, exact * 0.5);
            assert!(bounded.is_none() || bounded == Some(exact));
        }
    }

    #[test]
    fn envelope_examples() {
        let env = build_envelope(&[1.0, 3.0, 2.0], 1).unwrap();
        assert_eq!(env.upper, vec![3.0, 3.0, 3.0]);
        assert_eq!(env.lower, vec![1.0, 1.0, 2.0]);
        let q = [0.5, -1.0, 2.0, 0.0];
        let env = build_envelope(&q, 0).unwrap();
        assert_eq!(env.upper, q.to_vec());
        assert_eq!(env.lower, q.to_vec());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_walk(&mut rng, 256);
        let env = build_envelope(&q, 25).unwrap();
        let (u, l) = naive_envelope(&q, 25);
        assert_eq!(env.upper, u);
        assert_eq!(env.lower, l);
        for j in 0..q.len() {
            assert!(env.lower[j] <= q[j] && q[j] <= env.upper[j]);
        }
    }

    #[test]
    fn lb_keogh_examples() {
        let env = build_envelope(&[1.0, 3.0, 2.0], 1).unwrap();
        assert_eq!(lb_keogh(&env, &[2.0, 2.0, 2.5]).unwrap(), 0.0);
        assert_eq!(lb_keogh(&env, &[4.0, 3.0, 2.0]).unwrap(), 1.0);
        assert!(lb_keogh(&env, &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let n = rng.random_range(4..48);
            let r = rng.random_range(0..n);
            let q = random_walk(&mut rng, n);
            let c = random_walk(&mut rng, n);
            let env = build_envelope(&q, r).unwrap();
            let lb = lb_keogh(&env, &c).unwrap();
            let d = dtw(&q, &c, r).unwrap();
            assert!(lb <= d + 1e-9, "lb {lb} > dtw {d}");
            assert!(d <= euclidean(&q, &c).unwrap() + 1e-9);
        }
    }

    #[test]
    fn distance_kind_parsing() {
        assert_eq!("ed".parse::<DistanceKind>().unwrap(), DistanceKind::Euclidean);
        assert_eq!("dtw:7".parse::<DistanceKind>().unwrap(), DistanceKind::Dtw { band: 7 });
        assert!("dtw:x".parse::<DistanceKind>().is_err());
        assert_eq!(DistanceKind::dtw_fraction(64, 0.1), DistanceKind::Dtw { band: 7 });
        assert_eq!(DistanceKind::Dtw { band: 3 }.to_string(), "dtw:3");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn series(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-5.0f64..5.0, n)
        }

        proptest! {
            #[test]
            fn euclidean_is_a_metric((a, b, c) in (2usize..32).prop_flat_map(|n| (series(n), series(n), series(n)))) {
                let ab = euclidean(&a, &b).unwrap();
                prop_assert_eq!(ab, euclidean(&b, &a).unwrap());
                prop_assert!(ab <= euclidean(&a, &c).unwrap() + euclidean(&c, &b).unwrap() + 1e-9);
                prop_assert_eq!(euclidean(&a, &a).unwrap(), 0.0);
            }

            #[test]
            fn z_normalize_idempotent(a in series(16)) {
                let once = z_normalize(&a).unwrap();
                let twice = z_normalize(&once).unwrap();
                for (x, y) in once.iter().zip(&twice) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn bound_chain((q, c, r) in (3usize..32).prop_flat_map(|n| (series(n), series(n), 0..n))) {
                let env = build_envelope(&q, r).unwrap();
                let lb = lb_keogh(&env, &c).unwrap();
                let d = dtw(&q, &c, r).unwrap();
                prop_assert!(lb <= d + 1e-9);
                prop_assert!(d <= euclidean(&q, &c).unwrap() + 1e-9);
                prop_assert_eq!(dtw(&q, &c, 0).unwrap(), euclidean(&q, &c).unwrap());
            }
        }
    }
}
