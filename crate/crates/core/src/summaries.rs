//! Segment summaries (PAA, SAX, EAPCA), summarized DTW envelopes and the
//! series-level lower bounds built on them.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::series::Envelope;

/// Largest supported SAX alphabet.
pub const MAX_CARDINALITY: usize = 256;
pub const MAX_CARDINALITY_BITS: u8 = 8;

/// Segmentation of `[1, len]` into consecutive segments, stored as strictly
/// increasing 1-based right endpoints `m_1 < ... < m_M = len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentLayout {
    endpoints: Vec<usize>,
}

impl SegmentLayout {
    pub fn new(endpoints: Vec<usize>) -> Result<Self> {
        if endpoints.is_empty() {
            return Err(Error::invalid("segment layout needs at least one segment"));
        }
        let mut prev = 0;
        for &m in &endpoints {
            if m <= prev {
                return Err(Error::invalid(format!(
                    "segment endpoints must be strictly increasing, got {endpoints:?}"
                )));
            }
            prev = m;
        }
        Ok(Self { endpoints })
    }

    /// `segments` equal-length segments; `len` must be divisible.
    pub fn equal(len: usize, segments: usize) -> Result<Self> {
        if segments == 0 || len % segments != 0 {
            return Err(Error::invalid(format!(
                "series length {len} is not divisible into {segments} segments"
            )));
        }
        let w = len / segments;
        Self::new((1..=segments).map(|i| i * w).collect())
    }

    /// Near-equal segments for any length, with endpoints `round(i * len / M)`.
    pub fn spread(len: usize, segments: usize) -> Result<Self> {
        if segments == 0 || segments > len {
            return Err(Error::invalid(format!(
                "cannot split length {len} into {segments} segments"
            )));
        }
        Self::new(
            (1..=segments)
                .map(|i| ((i * len) as f64 / segments as f64).round() as usize)
                .collect(),
        )
    }

    pub fn endpoints(&self) -> &[usize] {
        &self.endpoints
    }

    pub fn segment_count(&self) -> usize {
        self.endpoints.len()
    }

    pub fn series_length(&self) -> usize {
        *self.endpoints.last().expect("layout is non-empty")
    }

    /// Zero-based half-open point ranges of each segment.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut start = 0;
        self.endpoints.iter().map(move |&end| {
            let r = start..end;
            start = end;
            r
        })
    }

    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges().map(|r| r.len())
    }

    pub(crate) fn segment_means(&self, values: &[f64]) -> Vec<f64> {
        self.ranges()
            .map(|r| {
                let w = r.len() as f64;
                values[r].iter().sum::<f64>() / w
            })
            .collect()
    }

    fn check_series(&self, len: usize) -> Result<()> {
        if self.series_length() != len {
            return Err(Error::LayoutMismatch(format!(
                "layout covers {} points but the series has {len}",
                self.series_length()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaaSummary {
    pub means: Vec<f64>,
    pub segment_count: usize,
    pub series_length: usize,
}

pub fn paa(series: &[f64], segments: usize) -> Result<PaaSummary> {
    let layout = SegmentLayout::equal(series.len(), segments)?;
    Ok(PaaSummary {
        means: layout.segment_means(series),
        segment_count: segments,
        series_length: series.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaxWord {
    pub symbols: Vec<u16>,
    pub cardinality: u16,
}

fn check_cardinality(cardinality: usize) -> Result<u8> {
    if !(2..=MAX_CARDINALITY).contains(&cardinality) || !cardinality.is_power_of_two() {
        return Err(Error::invalid(format!(
            "SAX cardinality must be a power of two in [2, {MAX_CARDINALITY}], got {cardinality}"
        )));
    }
    Ok(cardinality.trailing_zeros() as u8)
}

/// Standard-normal quantiles splitting the real line into `cardinality`
/// equiprobable regions, ascending.
pub fn sax_breakpoints(cardinality: usize) -> Result<Vec<f64>> {
    let bits = check_cardinality(cardinality)?;
    let stride = 1usize << (MAX_CARDINALITY_BITS - bits);
    Ok(max_breakpoints()
        .iter()
        .skip(stride - 1)
        .step_by(stride)
        .copied()
        .collect())
}

/// Breakpoints at the maximum cardinality; every coarser alphabet uses a
/// subset of these, so coarse symbols are bit prefixes of fine ones.
pub(crate) fn max_breakpoints() -> &'static [f64] {
    static BREAKPOINTS: OnceLock<Vec<f64>> = OnceLock::new();
    BREAKPOINTS.get_or_init(|| {
        let normal = Normal::standard();
        (1..MAX_CARDINALITY)
            .map(|j| normal.inverse_cdf(j as f64 / MAX_CARDINALITY as f64))
            .collect()
    })
}

/// Symbol at the maximum cardinality. A value on a breakpoint belongs to the
/// upper region.
pub(crate) fn max_symbol(mean: f64) -> u16 {
    max_breakpoints().partition_point(|&b| b <= mean) as u16
}

/// Value interval `[lo, hi]` covered by `symbol` at `2^bits` cardinality.
pub(crate) fn symbol_interval(symbol: u16, bits: u8) -> (f64, f64) {
    if bits == 0 {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let stride = 1usize << (MAX_CARDINALITY_BITS - bits);
    let bps = max_breakpoints();
    let s = symbol as usize;
    let lo = if s == 0 { f64::NEG_INFINITY } else { bps[s * stride - 1] };
    let hi = if s + 1 == 1usize << bits {
        f64::INFINITY
    } else {
        bps[(s + 1) * stride - 1]
    };
    (lo, hi)
}

pub fn sax(paa: &PaaSummary, cardinality: usize) -> Result<SaxWord> {
    let bits = check_cardinality(cardinality)?;
    let shift = MAX_CARDINALITY_BITS - bits;
    Ok(SaxWord {
        symbols: paa.means.iter().map(|&m| max_symbol(m) >> shift).collect(),
        cardinality: cardinality as u16,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EapcaSummary {
    pub layout: SegmentLayout,
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
}

pub fn eapca(series: &[f64], layout: &SegmentLayout) -> Result<EapcaSummary> {
    layout.check_series(series.len())?;
    let means = layout.segment_means(series);
    let stdevs = layout
        .ranges()
        .zip(&means)
        .map(|(r, &mu)| {
            let w = r.len() as f64;
            (series[r].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / w).sqrt()
        })
        .collect();
    Ok(EapcaSummary {
        layout: layout.clone(),
        means,
        stdevs,
    })
}

/// Per-segment max of the upper envelope and min of the lower envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizedEnvelope {
    pub upper_hat: Vec<f64>,
    pub lower_hat: Vec<f64>,
    pub layout: SegmentLayout,
}

pub fn summarize_envelope(env: &Envelope, layout: &SegmentLayout) -> Result<SummarizedEnvelope> {
    layout.check_series(env.len())?;
    let (upper_hat, lower_hat) = layout
        .ranges()
        .map(|r| {
            let u = env.upper[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = env.lower[r].iter().copied().fold(f64::INFINITY, f64::min);
            (u, l)
        })
        .unzip();
    Ok(SummarizedEnvelope {
        upper_hat,
        lower_hat,
        layout: layout.clone(),
    })
}

pub fn summarize_envelope_paa(env: &Envelope, segments: usize) -> Result<SummarizedEnvelope> {
    summarize_envelope(env, &SegmentLayout::equal(env.len(), segments)?)
}

pub fn summarize_envelope_eapca(env: &Envelope, layout: &SegmentLayout) -> Result<SummarizedEnvelope> {
    summarize_envelope(env, layout)
}

#[inline]
pub(crate) fn envelope_gap_sq(mean: f64, upper: f64, lower: f64) -> f64 {
    if mean > upper {
        (mean - upper) * (mean - upper)
    } else if mean < lower {
        (lower - mean) * (lower - mean)
    } else {
        0.0
    }
}

pub fn lb_paa(senv: &SummarizedEnvelope, cbar: &PaaSummary) -> Result<f64> {
    let layout = SegmentLayout::equal(cbar.series_length, cbar.segment_count)?;
    if layout != senv.layout {
        return Err(Error::LayoutMismatch(
            "PAA summary and envelope use different segmentations".into(),
        ));
    }
    let sum: f64 = cbar
        .means
        .iter()
        .zip(senv.upper_hat.iter().zip(&senv.lower_hat))
        .map(|(&c, (&u, &l))| envelope_gap_sq(c, u, l))
        .sum();
    let width = (cbar.series_length / cbar.segment_count) as f64;
    Ok(width.sqrt() * sum.sqrt())
}

pub fn lb_eapca(senv: &SummarizedEnvelope, cbar: &EapcaSummary) -> Result<f64> {
    if cbar.layout != senv.layout {
        return Err(Error::LayoutMismatch(
            "EAPCA summary and envelope use different segmentations".into(),
        ));
    }
    let sum: f64 = cbar
        .layout
        .lengths()
        .zip(&cbar.means)
        .zip(senv.upper_hat.iter().zip(&senv.lower_hat))
        .map(|((w, &c), (&u, &l))| w as f64 * envelope_gap_sq(c, u, l))
        .sum();
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{build_envelope, dtw, euclidean, lb_keogh, z_normalize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env_from(upper: Vec<f64>, lower: Vec<f64>) -> Envelope {
        Envelope {
            upper,
            lower,
            band_radius: 0,
        }
    }

    fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut acc = 0.0;
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                acc += rng.random::<f64>() - 0.5;
                acc
            })
            .collect();
        z_normalize(&raw).unwrap()
    }

    fn random_layout(rng: &mut ChaCha8Rng, n: usize) -> SegmentLayout {
        let m = rng.random_range(1..=n.min(8));
        let mut cuts: Vec<usize> = (1..n).collect();
        for i in 0..cuts.len() {
            let j = rng.random_range(i..cuts.len());
            cuts.swap(i, j);
        }
        let mut ends: Vec<usize> = cuts.into_iter().take(m - 1).collect();
        ends.push(n);
        ends.sort_unstable();
        SegmentLayout::new(ends).unwrap()
    }

    #[test]
    fn paa_examples() {
        assert_eq!(paa(&[1.0, 2.0, 3.0, 4.0], 2).unwrap().means, vec![1.5, 3.5]);
        let s = [0.5, -1.0, 2.0, 0.25];
        assert_eq!(paa(&s, 4).unwrap().means, s.to_vec());
        let z = z_normalize(&[1.0, 4.0, 2.0, 8.0]).unwrap();
        assert!(paa(&z, 1).unwrap().means[0].abs() < 1e-12);
        assert!(paa(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn sax_examples() {
        let p = PaaSummary {
            means: vec![-0.5, 0.7],
            segment_count: 2,
            series_length: 4,
        };
        assert_eq!(sax(&p, 2).unwrap().symbols, vec![0, 1]);
        let bp = sax_breakpoints(4).unwrap();
        assert_eq!(bp.len(), 3);
        assert!((bp[0] + 0.6745).abs() < 1e-4 && bp[1].abs() < 1e-12 && (bp[2] - 0.6745).abs() < 1e-4);
        let on_break = PaaSummary {
            means: vec![bp[2]],
            segment_count: 1,
            series_length: 1,
        };
        assert_eq!(sax(&on_break, 4).unwrap().symbols, vec![3]);
        assert!(sax(&p, 3).is_err());
        assert!(sax(&p, 512).is_err());
    }

    #[test]
    fn sax_symbols_are_bit_prefixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let m: f64 = rng.random::<f64>() * 6.0 - 3.0;
            let fine = max_symbol(m);
            for bits in 1..=MAX_CARDINALITY_BITS {
                let s = fine >> (MAX_CARDINALITY_BITS - bits);
                let (lo, hi) = symbol_interval(s, bits);
                assert!(lo <= m && m <= hi);
            }
        }
    }

    #[test]
    fn eapca_examples() {
        let layout = SegmentLayout::new(vec![2, 4]).unwrap();
        let e = eapca(&[1.0, 1.0, 4.0, 4.0], &layout).unwrap();
        assert_eq!(e.means, vec![1.0, 4.0]);
        assert_eq!(e.stdevs, vec![0.0, 0.0]);

        let s = [1.0, 2.0, 3.0, 6.0];
        let one = eapca(&s, &SegmentLayout::new(vec![4]).unwrap()).unwrap();
        assert_eq!(one.means, vec![3.0]);
        assert!((one.stdevs[0] - 3.5f64.sqrt()).abs() < 1e-12);

        assert!(SegmentLayout::new(vec![2, 2]).is_err());
        assert!(eapca(&s, &SegmentLayout::new(vec![2, 5]).unwrap()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = random_series(&mut rng, 37);
            let layout = random_layout(&mut rng, 37);
            let e = eapca(&s, &layout).unwrap();
            let mut start = 0;
            for (i, &end) in layout.endpoints().iter().enumerate() {
                let mut sum = 0.0;
                for v in &s[start..end] {
                    sum += v;
                }
                let mean = sum / (end - start) as f64;
                let mut ss = 0.0;
                for v in &s[start..end] {
                    ss += (v - mean).powi(2);
                }
                assert!((e.means[i] - mean).abs() < 1e-12);
                assert!((e.stdevs[i] - (ss / (end - start) as f64).sqrt()).abs() < 1e-12);
                start = end;
            }
        }
    }

    #[test]
    fn summarized_envelope_examples() {
        let env = env_from(vec![3.0, 3.0, 3.0, 4.0], vec![1.0, 1.0, 2.0, 2.0]);
        let s = summarize_envelope_paa(&env, 2).unwrap();
        assert_eq!(s.upper_hat, vec![3.0, 4.0]);
        assert_eq!(s.lower_hat, vec![1.0, 2.0]);
        let id = summarize_envelope_paa(&env, 4).unwrap();
        assert_eq!(id.upper_hat, env.upper);
        assert_eq!(id.lower_hat, env.lower);

        let env = env_from(vec![3.0, 3.0, 5.0, 5.0], vec![1.0, 0.0, 2.0, 3.0]);
        let s = summarize_envelope_eapca(&env, &SegmentLayout::new(vec![2, 4]).unwrap()).unwrap();
        assert_eq!(s.upper_hat, vec![3.0, 5.0]);
        let single = summarize_envelope_eapca(&env, &SegmentLayout::new(vec![4]).unwrap()).unwrap();
        assert_eq!((single.upper_hat[0], single.lower_hat[0]), (5.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = random_series(&mut rng, 29);
            let env = build_envelope(&q, 3).unwrap();
            let layout = random_layout(&mut rng, 29);
            let s = summarize_envelope_eapca(&env, &layout).unwrap();
            let mut start = 0;
            for (i, &end) in layout.endpoints().iter().enumerate() {
                let mut u = f64::NEG_INFINITY;
                let mut l = f64::INFINITY;
                for j in start..end {
                    u = u.max(env.upper[j]);
                    l = l.min(env.lower[j]);
                }
                assert_eq!(s.upper_hat[i], u);
                assert_eq!(s.lower_hat[i], l);
                assert!(s.upper_hat[i] >= s.lower_hat[i]);
                start = end;
            }
        }
    }

    #[test]
    fn lb_paa_examples() {
        let senv = SummarizedEnvelope {
            upper_hat: vec![3.0, 4.0],
            lower_hat: vec![1.0, 1.0],
            layout: SegmentLayout::equal(4, 2).unwrap(),
        };
        let inside = PaaSummary {
            means: vec![2.0, 3.0],
            segment_count: 2,
            series_length: 4,
        };
        assert_eq!(lb_paa(&senv, &inside).unwrap(), 0.0);
        let outside = PaaSummary {
            means: vec![2.0, 5.0],
            segment_count: 2,
            series_length: 4,
        };
        assert!((lb_paa(&senv, &outside).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let wrong = PaaSummary {
            means: vec![0.0; 4],
            segment_count: 4,
            series_length: 4,
        };
        assert!(lb_paa(&senv, &wrong).is_err());
    }

    #[test]
    fn lb_eapca_examples() {
        let layout = SegmentLayout::new(vec![2, 4]).unwrap();
        let senv = SummarizedEnvelope {
            upper_hat: vec![3.0, 5.0],
            lower_hat: vec![1.0, 2.0],
            layout: layout.clone(),
        };
        let c = EapcaSummary {
            layout: layout.clone(),
            means: vec![0.0, 6.0],
            stdevs: vec![0.0, 0.0],
        };
        assert!((lb_eapca(&senv, &c).unwrap() - 2.0).abs() < 1e-12);
        let inside = EapcaSummary {
            layout,
            means: vec![2.0, 3.0],
            stdevs: vec![0.0, 0.0],
        };
        assert_eq!(lb_eapca(&senv, &inside).unwrap(), 0.0);
        let other = EapcaSummary {
            layout: SegmentLayout::new(vec![1, 4]).unwrap(),
            means: vec![2.0, 3.0],
            stdevs: vec![0.0, 0.0],
        };
        assert!(lb_eapca(&senv, &other).is_err());
    }

    #[test]
    fn lower_bound_chain_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = 32;
            let r = rng.random_range(0..n / 2);
            let q = random_series(&mut rng, n);
            let c = random_series(&mut rng, n);
            let env = build_envelope(&q, r).unwrap();
            let keogh = lb_keogh(&env, &c).unwrap();
            let d = dtw(&q, &c, r).unwrap();
            let m = [1, 2, 4, 8, 16, 32][rng.random_range(0..6)];
            let lp = lb_paa(&summarize_envelope_paa(&env, m).unwrap(), &paa(&c, m).unwrap()).unwrap();
            let layout = random_layout(&mut rng, n);
            let le = lb_eapca(
                &summarize_envelope_eapca(&env, &layout).unwrap(),
                &eapca(&c, &layout).unwrap(),
            )
            .unwrap();
            assert!(lp <= keogh + 1e-9 && le <= keogh + 1e-9 && keogh <= d + 1e-9);
        }
    }

    #[test]
    fn paa_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_series(&mut rng, 64);
            let b = random_series(&mut rng, 64);
            let m = 16;
            let pa = paa(&a, m).unwrap().means;
            let pb = paa(&b, m).unwrap().means;
            let reduced = (4.0 * pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt();
            assert!(reduced <= euclidean(&a, &b).unwrap() + 1e-9);
        }
    }

    #[test]
    fn sax_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut means: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
        means.sort_by(f64::total_cmp);
        let p = PaaSummary {
            segment_count: means.len(),
            series_length: means.len(),
            means,
        };
        for card in [2, 4, 16, 256] {
            let w = sax(&p, card).unwrap();
            assert!(w.symbols.windows(2).all(|s| s[0] <= s[1]));
        }
    }

    #[test]
    fn spread_layout_covers_length() {
        let l = SegmentLayout::spread(45, 16).unwrap();
        assert_eq!(l.series_length(), 45);
        assert_eq!(l.lengths().sum::<usize>(), 45);
        assert!(l.lengths().all(|w| w >= 2));
        assert!(SegmentLayout::spread(4, 5).is_err());
    }
}
