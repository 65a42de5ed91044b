use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sorted_quantile;
use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Kernel products below this fraction of the peak are skipped.
const NEGLIGIBLE: f64 = 1e-20;
/// Grid margin beyond the data range, in bandwidths.
const MARGIN: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    /// Nearest grid index, and whether `v` lay outside the axis range.
    pub fn nearest(&self, v: f64) -> (usize, bool) {
        let pos = ((v - self.min) / self.step()).round();
        let clamped = v < self.min || v > self.max || !pos.is_finite();
        let i = if pos.is_finite() { pos.clamp(0.0, (self.points - 1) as f64) as usize } else { 0 };
        (i, clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: Vec<usize>,
    /// Per-axis bandwidths; the normal-reference rule when absent.
    pub bandwidth: Option<Vec<f64>>,
    /// Multiplier applied to the default bandwidth.
    pub bandwidth_scale: f64,
}

impl GridSpec {
    pub fn two_d() -> Self {
        Self {
            points: vec![200, 200],
            bandwidth: None,
            bandwidth_scale: 1.0,
        }
    }

    /// Two distance axes of 180 points and a 60-point time axis.
    pub fn three_d() -> Self {
        Self {
            points: vec![180, 180, 60],
            bandwidth: None,
            bandwidth_scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.bandwidth_scale = scale;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KdeWarning {
    /// The axis had no spread; a floor bandwidth was used.
    ZeroVariance { axis: usize },
}

/// Gaussian product-kernel density tabulated on a regular grid. Serializes
/// as its samples, bandwidths and axes; the table is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "KdeRepr", try_from = "KdeRepr")]
pub struct KdeGrid {
    axes: Vec<GridAxis>,
    bandwidth: Vec<f64>,
    samples: Vec<Vec<f64>>,
    density: Vec<f64>,
    warnings: Vec<KdeWarning>,
}

#[derive(Serialize, Deserialize)]
struct KdeRepr {
    axes: Vec<GridAxis>,
    bandwidth: Vec<f64>,
    samples: Vec<Vec<f64>>,
}

impl From<KdeGrid> for KdeRepr {
    fn from(g: KdeGrid) -> Self {
        KdeRepr {
            axes: g.axes,
            bandwidth: g.bandwidth,
            samples: g.samples,
        }
    }
}

impl TryFrom<KdeRepr> for KdeGrid {
    type Error = Error;

    fn try_from(r: KdeRepr) -> Result<Self> {
        let d = r.axes.len();
        if !(1..=3).contains(&d) || r.bandwidth.len() != d || r.samples.iter().any(|s| s.len() != d) {
            return Err(Error::invalid("inconsistent density grid"));
        }
        if r.axes.iter().any(|a| a.points < 2 || !(a.max > a.min)) || r.bandwidth.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::invalid("invalid density grid axis"));
        }
        let density = tabulate(&r.samples, &r.axes, &r.bandwidth);
        Ok(KdeGrid {
            axes: r.axes,
            bandwidth: r.bandwidth,
            samples: r.samples,
            density,
            warnings: Vec::new(),
        })
    }
}

/// Normal-reference bandwidth per axis, `s * (4 / ((d + 2) n))^(1 / (d + 4))`
/// with `s = min(sd, IQR / 1.349)`. Returns `None` for an axis without spread.
pub fn normal_reference_bandwidth(points: &[Vec<f64>], axis: usize) -> Option<f64> {
    let n = points.len() as f64;
    let d = points[0].len() as f64;
    let mut v: Vec<f64> = points.iter().map(|p| p[axis]).collect();
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    v.sort_by(f64::total_cmp);
    let iqr = sorted_quantile(&v, 0.75) - sorted_quantile(&v, 0.25);
    let s = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    (s > 0.0).then(|| s * (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0)))
}

pub fn kde_fit(points: &[Vec<f64>], spec: &GridSpec) -> Result<KdeGrid> {
    if points.len() < 2 {
        return Err(Error::invalid("density estimation needs at least two points"));
    }
    let d = spec.points.len();
    if !(1..=3).contains(&d) || points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid(format!("points must have the grid's {d} coordinates")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample coordinate"));
    }
    if spec.points.iter().any(|&m| m < 2) {
        return Err(Error::invalid("each grid axis needs at least two points"));
    }
    if !(spec.bandwidth_scale > 0.0) {
        return Err(Error::invalid("bandwidth scale must be positive"));
    }
    let mut warnings = Vec::new();
    let bandwidth: Vec<f64> = match &spec.bandwidth {
        Some(h) => {
            if h.len() != d || h.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("bandwidths must be positive, one per axis"));
            }
            h.clone()
        }
        None => (0..d)
            .map(|a| match normal_reference_bandwidth(points, a) {
                Some(h) => h * spec.bandwidth_scale,
                None => {
                    warnings.push(KdeWarning::ZeroVariance { axis: a });
                    1e-3 * points[0][a].abs().max(1.0)
                }
            })
            .collect(),
    };
    let axes: Vec<GridAxis> = (0..d)
        .map(|a| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[a]), hi.max(p[a])));
            GridAxis {
                min: lo - MARGIN * bandwidth[a],
                max: hi + MARGIN * bandwidth[a],
                points: spec.points[a],
            }
        })
        .collect();
    let density = tabulate(points, &axes, &bandwidth);
    Ok(KdeGrid {
        axes,
        bandwidth,
        samples: points.to_vec(),
        density,
        warnings,
    })
}

/// Per-axis kernel values, `samples x points`, scaled by `1 / h`.
fn kernel_table(samples: &[Vec<f64>], axis: &GridAxis, a: usize, h: f64) -> Vec<f64> {
    let m = axis.points;
    let mut out = vec![0.0; samples.len() * m];
    for (s, row) in samples.iter().zip(out.chunks_mut(m)) {
        for (i, slot) in row.iter_mut().enumerate() {
            let z = (axis.value(i) - s[a]) / h;
            *slot = INV_SQRT_2PI * (-0.5 * z * z).exp() / h;
        }
    }
    out
}

fn tabulate(samples: &[Vec<f64>], axes: &[GridAxis], bandwidth: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let tables: Vec<Vec<f64>> = axes
        .iter()
        .enumerate()
        .map(|(a, ax)| kernel_table(samples, ax, a, bandwidth[a]))
        .collect();
    let peak: f64 = bandwidth.iter().map(|h| INV_SQRT_2PI / h).product();
    let cut = NEGLIGIBLE * peak;
    let dims: Vec<usize> = axes.iter().map(|a| a.points).collect();
    let inner: usize = dims[1..].iter().product();
    let mut density = vec![0.0; dims.iter().product()];
    density.par_chunks_mut(inner).enumerate().for_each(|(i, slab)| {
        for s in 0..n {
            let a = tables[0][s * dims[0] + i];
            match dims.len() {
                1 => slab[0] += a,
                2 => {
                    let k1 = &tables[1][s * dims[1]..(s + 1) * dims[1]];
                    if a * k1.iter().copied().fold(0.0, f64::max) < cut {
                        continue;
                    }
                    for (out, &b) in slab.iter_mut().zip(k1) {
                        *out += a * b;
                    }
                }
                _ => {
                    let k1 = &tables[1][s * dims[1]..(s + 1) * dims[1]];
                    let k2 = &tables[2][s * dims[2]..(s + 1) * dims[2]];
                    let k2max = k2.iter().copied().fold(0.0, f64::max);
                    for (j, &b) in k1.iter().enumerate() {
                        let ab = a * b;
                        if ab * k2max < cut {
                            continue;
                        }
                        for (out, &c) in slab[j * dims[2]..(j + 1) * dims[2]].iter_mut().zip(k2) {
                            *out += ab * c;
                        }
                    }
                }
            }
        }
        slab.iter_mut().for_each(|v| *v /= n as f64);
    });
    density
}

/// Discrete distribution over the free axis of a grid slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub values: Vec<f64>,
    pub mass: Vec<f64>,
    /// Some conditioning coordinate fell outside the grid and was clamped.
    pub clamped: bool,
}

impl Conditional {
    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.mass).map(|(x, m)| x * m).sum()
    }

    /// Inverse of the cumulative mass, interpolated linearly between cells.
    pub fn quantile(&self, q: f64) -> f64 {
        let first = self.mass.iter().position(|&m| m > 0.0).unwrap_or(0);
        if q <= 0.0 {
            return self.values[first];
        }
        let q = q.min(1.0);
        let mut cum = 0.0;
        let last = self.mass.iter().rposition(|&m| m > 0.0).unwrap_or(0);
        for i in first..=last {
            let next = if i == last { 1.0 } else { cum + self.mass[i] };
            if next >= q {
                if i == first {
                    return self.values[i];
                }
                let frac = (q - cum) / (next - cum);
                return self.values[i - 1] + frac * (self.values[i] - self.values[i - 1]);
            }
            cum = next;
        }
        self.values[last]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.mass)
            .take_while(|(v, _)| **v <= x)
            .map(|(_, m)| m)
            .sum::<f64>()
            .min(1.0)
    }
}

impl KdeGrid {
    pub fn dimensions(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn warnings(&self) -> &[KdeWarning] {
        &self.warnings
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.points + i)
    }

    pub fn density_at(&self, idx: &[usize]) -> f64 {
        self.density[self.flat(idx)]
    }

    /// Density sum times cell volume; close to 1 when the grid covers the mass.
    pub fn riemann_sum(&self) -> f64 {
        let cell: f64 = self.axes.iter().map(GridAxis::step).product();
        self.density.iter().sum::<f64>() * cell
    }

    /// Grid index of the highest density cell.
    pub fn argmax(&self) -> Vec<usize> {
        let (mut flat, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let mut idx = vec![0; self.axes.len()];
        for (a, axis) in self.axes.iter().enumerate().rev() {
            idx[a] = flat % axis.points;
            flat /= axis.points;
        }
        idx
    }

    /// Distribution of the first coordinate given the others, read off the
    /// nearest grid slice and renormalized.
    pub fn conditional(&self, fixed: &[f64]) -> Result<Conditional> {
        if fixed.len() + 1 != self.axes.len() {
            return Err(Error::invalid(format!(
                "conditioning a {}-dimensional grid needs {} coordinates",
                self.axes.len(),
                self.axes.len() - 1
            )));
        }
        let mut clamped = false;
        let mut idx = vec![0usize; self.axes.len()];
        for (a, &v) in fixed.iter().enumerate() {
            let (i, c) = self.axes[a + 1].nearest(v);
            idx[a + 1] = i;
            clamped |= c;
        }
        let m = self.axes[0].points;
        let mut mass: Vec<f64> = (0..m)
            .map(|i| {
                idx[0] = i;
                self.density_at(&idx)
            })
            .collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("the density has no support at the conditioning value"));
        }
        mass.iter_mut().for_each(|v| *v /= total);
        Ok(Conditional {
            values: (0..m).map(|i| self.axes[0].value(i)).collect(),
            mass,
            clamped,
        })
    }
}
