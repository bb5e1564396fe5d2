//! Two-sample distances between sets of image patches.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::pathtracer::io::LinearImage;
use crate::pathtracer::Rgb;
use crate::rng::CounterRng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("item {item} has {got} values, expected {want}")]
    ItemLength { item: usize, got: usize, want: usize },
    #[error("non-finite value in item {0}")]
    NonFinite(usize),
    #[error("sample set needs at least {need} items, got {got}")]
    TooFewItems { need: usize, got: usize },
    #[error("pool factor {factor} does not divide {height}x{width}")]
    PoolMismatch { factor: usize, height: usize, width: usize },
    #[error("spectral distance needs even spatial dimensions, got {0}x{1}")]
    OddDimensions(usize, usize),
    #[error("invalid metric configuration: {0}")]
    Config(String),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    ImageMismatch(usize, usize, usize, usize),
    #[error("patch size {patch} does not fit a {width}x{height} image")]
    PatchTooLarge { patch: usize, width: usize, height: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Equal-shape real grids stored channel-major (`[c][y][x]`), one flat vector per item.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    channels: usize,
    height: usize,
    width: usize,
    items: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(channels: usize, height: usize, width: usize, items: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        let want = channels * height * width;
        for (i, it) in items.iter().enumerate() {
            if it.len() != want {
                return Err(MetricError::ItemLength {
                    item: i,
                    got: it.len(),
                    want,
                });
            }
            if it.iter().any(|v| !v.is_finite()) {
                return Err(MetricError::NonFinite(i));
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            items,
        })
    }

    /// One-channel 1×1 items, one per value.
    pub fn from_scalars(values: &[f64]) -> Result<Self, MetricError> {
        Self::new(1, 1, 1, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            items: self.items.iter().map(|it| it.iter().map(|&v| f(v)).collect()).collect(),
        }
    }

    fn plane<'a>(&self, item: &'a [f64], c: usize) -> &'a [f64] {
        let n = self.height * self.width;
        &item[c * n..(c + 1) * n]
    }

    fn same_shape(&self, other: &Self) -> Result<(), MetricError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(MetricError::ShapeMismatch(self.shape(), other.shape()))
        }
    }
}

/// Block mean pooling by `factor` in both spatial directions.
pub fn mean_pool(set: &SampleSet, factor: usize) -> Result<SampleSet, MetricError> {
    if factor == 0 {
        return Err(MetricError::Config("pool factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(set.clone());
    }
    let (c, h, w) = set.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(MetricError::PoolMismatch {
            factor,
            height: h,
            width: w,
        });
    }
    let (ph, pw) = (h / factor, w / factor);
    let scale = 1.0 / (factor * factor) as f64;
    let items = set
        .items
        .iter()
        .map(|it| {
            let mut out = vec![0.0; c * ph * pw];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out[(ch * ph + y / factor) * pw + x / factor] += it[(ch * h + y) * w + x] * scale;
                    }
                }
            }
            out
        })
        .collect();
    SampleSet::new(c, ph, pw, items)
}

/// RBF bandwidth choice for [`mmd_rbf`].
#[derive(Clone, Debug, PartialEq)]
pub enum Bandwidths {
    Fixed(Vec<f64>),
    /// Multipliers of the median pairwise distance over both sets; a zero
    /// median falls back to a unit base.
    Median(Vec<f64>),
}

impl Default for Bandwidths {
    fn default() -> Self {
        Bandwidths::Median(vec![0.5, 1.0, 2.0, 4.0, 8.0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub mmd_bandwidths: Bandwidths,
    pub pool_factor: usize,
    pub fft_pool_factor: usize,
    pub range_k_sigma: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            mmd_bandwidths: Bandwidths::default(),
            pool_factor: 1,
            fft_pool_factor: 1,
            range_k_sigma: 3.0,
        }
    }
}

impl MetricConfig {
    pub fn with_fixed_bandwidths(mut self, b: Vec<f64>) -> Self {
        self.mmd_bandwidths = Bandwidths::Fixed(b);
        self
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let b = match &self.mmd_bandwidths {
            Bandwidths::Fixed(b) | Bandwidths::Median(b) => b,
        };
        if b.is_empty() || b.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(MetricError::Config("bandwidths must be nonempty and positive".into()));
        }
        if self.pool_factor == 0 || self.fft_pool_factor == 0 {
            return Err(MetricError::Config("pool factors must be at least 1".into()));
        }
        if !(self.range_k_sigma > 0.0 && self.range_k_sigma.is_finite()) {
            return Err(MetricError::Config("range_k_sigma must be positive".into()));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of `‖a − b‖` over all unordered pairs of the combined items.
pub fn median_pairwise_distance(x: &SampleSet, y: &SampleSet) -> f64 {
    let all: Vec<&Vec<f64>> = x.items.iter().chain(&y.items).collect();
    let mut d: Vec<f64> = (0..all.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let all = &all;
            (i + 1..all.len()).map(move |j| sq_dist(all[i], all[j]).sqrt())
        })
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Concrete bandwidths for the pair of pooled sets.
pub fn resolve_bandwidths(x: &SampleSet, y: &SampleSet, b: &Bandwidths) -> Vec<f64> {
    match b {
        Bandwidths::Fixed(v) => v.clone(),
        Bandwidths::Median(mult) => {
            let med = median_pairwise_distance(x, y);
            let base = if med > 0.0 { med } else { 1.0 };
            mult.iter().map(|m| m * base).collect()
        }
    }
}

/// Sum over `i`, of `Σ_j exp(−d²_ij / 2σ²)` for every bandwidth, skipping `i = j` when `skip_diag`.
fn kernel_sums(a: &[Vec<f64>], b: &[Vec<f64>], inv2s2: &[f64], skip_diag: bool) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; inv2s2.len()];
            for (j, bj) in b.iter().enumerate() {
                if skip_diag && i == j {
                    continue;
                }
                let d2 = sq_dist(&a[i], bj);
                for (s, &f) in acc.iter_mut().zip(inv2s2) {
                    *s += (-d2 * f).exp();
                }
            }
            acc
        })
        .collect();
    let mut tot = vec![0.0; inv2s2.len()];
    for r in &rows {
        for (t, v) in tot.iter_mut().zip(r) {
            *t += v;
        }
    }
    tot
}

/// Unbiased MMD² per bandwidth, unclamped.
pub fn mmd2_unbiased_per_bandwidth(x: &SampleSet, y: &SampleSet, bandwidths: &[f64]) -> Result<Vec<f64>, MetricError> {
    x.same_shape(y)?;
    for s in [x, y] {
        if s.len() < 2 {
            return Err(MetricError::TooFewItems { need: 2, got: s.len() });
        }
    }
    let inv: Vec<f64> = bandwidths.iter().map(|s| 1.0 / (2.0 * s * s)).collect();
    let (m, n) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sums(&x.items, &x.items, &inv, true);
    let kyy = kernel_sums(&y.items, &y.items, &inv, true);
    let kxy = kernel_sums(&x.items, &y.items, &inv, false);
    let kyx = kernel_sums(&y.items, &x.items, &inv, false);
    Ok((0..inv.len())
        .map(|k| kxx[k] / (m * (m - 1.0)) + kyy[k] / (n * (n - 1.0)) - (kxy[k] + kyx[k]) / (m * n))
        .collect())
}

/// Unclamped multi-bandwidth unbiased MMD² on pooled items.
pub fn mmd_rbf_raw(x: &SampleSet, y: &SampleSet, config: &MetricConfig) -> Result<f64, MetricError> {
    config.validate()?;
    x.same_shape(y)?;
    let (px, py) = (mean_pool(x, config.pool_factor)?, mean_pool(y, config.pool_factor)?);
    let bw = resolve_bandwidths(&px, &py, &config.mmd_bandwidths);
    Ok(mmd2_unbiased_per_bandwidth(&px, &py, &bw)?.iter().sum())
}

/// `Σ_σ MMD²_u(x, y; σ)`, clamped at 0.
pub fn mmd_rbf(x: &SampleSet, y: &SampleSet, config: &MetricConfig) -> Result<f64, MetricError> {
    Ok(mmd_rbf_raw(x, y, config)?.max(0.0))
}

fn channel_mean_std(set: &SampleSet) -> Vec<(f64, f64)> {
    (0..set.channels)
        .map(|c| {
            let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for it in &set.items {
                for &v in set.plane(it, c) {
                    n += 1.0;
                    let d = v - mean;
                    mean += d / n;
                    m2 += d * (v - mean);
                }
            }
            (mean, if n > 0.0 { (m2 / n).sqrt() } else { 0.0 })
        })
        .collect()
}

/// Mean over channels of `(μ_c(x) − μ_c(y))² + (s_c(x) − s_c(y))²`, where
/// `μ_c`, `s_c` are the mean and population standard deviation of channel `c`
/// over all items and positions.
pub fn moment_distance(x: &SampleSet, y: &SampleSet) -> Result<f64, MetricError> {
    x.same_shape(y)?;
    if x.is_empty() || y.is_empty() {
        return Err(MetricError::TooFewItems { need: 1, got: 0 });
    }
    let (a, b) = (channel_mean_std(x), channel_mean_std(y));
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2))
        .sum();
    Ok(total / x.channels as f64)
}

/// 2D FFT magnitudes, reused across items of one shape.
struct Fft2 {
    h: usize,
    w: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            rows: planner.plan_fft_forward(w),
            cols: planner.plan_fft_forward(h),
        }
    }

    fn magnitude(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
        for row in buf.chunks_exact_mut(w) {
            self.rows.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            self.cols.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        buf.iter().map(|c| c.norm()).collect()
    }
}

/// Per-channel FFT magnitude grid averaged over items.
pub fn mean_fft_magnitude(set: &SampleSet) -> Vec<f64> {
    let (c, h, w) = set.shape();
    let fft = Fft2::new(h, w);
    let per_item: Vec<Vec<f64>> = set
        .items
        .par_iter()
        .map(|it| (0..c).flat_map(|ch| fft.magnitude(set.plane(it, ch))).collect())
        .collect();
    let mut acc = vec![0.0; c * h * w];
    for m in &per_item {
        for (a, v) in acc.iter_mut().zip(m) {
            *a += v;
        }
    }
    let n = set.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Squared L2 distance between item-averaged FFT magnitude grids of the pooled sets.
pub fn spectral_distance(x: &SampleSet, y: &SampleSet, config: &MetricConfig) -> Result<f64, MetricError> {
    config.validate()?;
    x.same_shape(y)?;
    if x.is_empty() || y.is_empty() {
        return Err(MetricError::TooFewItems { need: 1, got: 0 });
    }
    let (px, py) = (mean_pool(x, config.fft_pool_factor)?, mean_pool(y, config.fft_pool_factor)?);
    let (_, h, w) = px.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(MetricError::OddDimensions(h, w));
    }
    let (a, b) = (mean_fft_magnitude(&px), mean_fft_magnitude(&py));
    Ok(sq_dist(&a, &b))
}

/// Mean squared excess of `x` outside the per-channel intervals `[lo_c, hi_c]`.
pub fn range_penalty_interval(x: &SampleSet, lo: &[f64], hi: &[f64]) -> Result<f64, MetricError> {
    if lo.len() != x.channels || hi.len() != x.channels {
        return Err(MetricError::Config(format!("need {} interval bounds per side", x.channels)));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for it in &x.items {
        for c in 0..x.channels {
            for &v in x.plane(it, c) {
                let e = if v < lo[c] {
                    lo[c] - v
                } else if v > hi[c] {
                    v - hi[c]
                } else {
                    0.0
                };
                total += e * e;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Range penalty against `[m_c − k s_c, m_c + k s_c]` with `m_c`, `s_c` taken from `reference`.
pub fn range_penalty(x: &SampleSet, reference: &SampleSet, config: &MetricConfig) -> Result<f64, MetricError> {
    config.validate()?;
    x.same_shape(reference)?;
    let ms = channel_mean_std(reference);
    let k = config.range_k_sigma;
    let lo: Vec<f64> = ms.iter().map(|(m, s)| m - k * s).collect();
    let hi: Vec<f64> = ms.iter().map(|(m, s)| m + k * s).collect();
    range_penalty_interval(x, &lo, &hi)
}

/// How the synthetic Gaussian noise is scaled in [`mc_vs_gaussian_gap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMatch {
    /// Per-pixel, per-channel variance of the residual, supplied by the caller.
    PerPixel,
    /// One variance per channel, from the residual itself.
    PerChannel,
    /// `σ_VP(t)² · κ` for every value.
    Schedule { kappa: f64 },
}

impl NoiseMatch {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseMatch::PerPixel => "per-pixel",
            NoiseMatch::PerChannel => "per-channel",
            NoiseMatch::Schedule { .. } => "schedule",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapConfig {
    pub n_patches: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub noise: NoiseMatch,
    /// Independent Gaussian-vs-Gaussian pairs averaged for each baseline.
    pub baseline_pairs: usize,
    /// Give the Gaussian the channel correlation of the standardised residual
    /// (not applied to [`NoiseMatch::Schedule`], whose noise is isotropic).
    pub correlate_channels: bool,
    pub metrics: MetricConfig,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            n_patches: 512,
            patch_size: 4,
            seed: 0,
            noise: NoiseMatch::PerPixel,
            baseline_pairs: 8,
            correlate_channels: true,
            metrics: MetricConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub spp: u64,
    pub mapped_t: usize,
    /// Unclamped multi-bandwidth MMD² between residual and Gaussian patches.
    pub mmd: f64,
    /// Mean absolute MMD² over Gaussian-vs-Gaussian pairs.
    pub mmd_baseline: f64,
    pub moment: f64,
    pub moment_baseline: f64,
    pub spectral: f64,
    pub spectral_baseline: f64,
    pub range_penalty: f64,
    pub bandwidths: Vec<f64>,
}

impl GapReport {
    pub fn mmd_ratio(&self) -> f64 {
        if self.mmd_baseline > 0.0 {
            self.mmd / self.mmd_baseline
        } else if self.mmd == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }
}

fn normal(rng: &mut CounterRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `(x0, y0)` corners of `n` patches drawn uniformly over the image.
fn patch_corners(width: usize, height: usize, patch: usize, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = CounterRng::new(seed, &[0x0050_4154_4348]);
    let (nx, ny) = ((width - patch + 1) as f64, (height - patch + 1) as f64);
    (0..n)
        .map(|_| (((rng.uniform() * nx) as usize).min(width - patch), ((rng.uniform() * ny) as usize).min(height - patch)))
        .collect()
}

fn extract(field: &[Rgb], width: usize, patch: usize, corners: &[(usize, usize)]) -> Vec<Vec<f64>> {
    corners
        .iter()
        .map(|&(x0, y0)| {
            let mut v = vec![0.0; 3 * patch * patch];
            for c in 0..3 {
                for y in 0..patch {
                    for x in 0..patch {
                        v[(c * patch + y) * patch + x] = field[(y0 + y) * width + x0 + x][c];
                    }
                }
            }
            v
        })
        .collect()
}

/// Gaussian patches: at each pixel `z = L n` with `n ~ N(0, I₃)`, scaled per
/// channel by `std_field` at the same corners.
fn gaussian_patches(
    std_field: &[Rgb],
    width: usize,
    patch: usize,
    corners: &[(usize, usize)],
    chol: &[[f64; 3]; 3],
    seed: u64,
    stream: u64,
) -> Vec<Vec<f64>> {
    let mut rng = CounterRng::new(seed, &[0x0047_4155_5353, stream]);
    corners
        .iter()
        .map(|&(x0, y0)| {
            let mut v = vec![0.0; 3 * patch * patch];
            for y in 0..patch {
                for x in 0..patch {
                    let sd = std_field[(y0 + y) * width + x0 + x];
                    let n = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
                    for c in 0..3 {
                        let z: f64 = (0..=c).map(|k| chol[c][k] * n[k]).sum();
                        v[(c * patch + y) * patch + x] = sd[c] * z;
                    }
                }
            }
            v
        })
        .collect()
}

pub const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Correlation between channels of `residual / std`, over pixels whose
/// standard deviation is positive in every channel; identity without such pixels.
pub fn channel_correlation(residual: &[Rgb], std_field: &[Rgb]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    let mut count = 0usize;
    for (r, s) in residual.iter().zip(std_field) {
        if s.min_elem() <= 0.0 {
            continue;
        }
        let z = [r[0] / s[0], r[1] / s[1], r[2] / s[2]];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += z[i] * z[j];
            }
        }
        count += 1;
    }
    if count < 2 || (0..3).any(|i| m[i][i] <= 0.0) {
        return IDENTITY3;
    }
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = m[i][j] / (m[i][i] * m[j][j]).sqrt();
        }
    }
    c
}

/// Lower Cholesky factor of a 3×3 correlation matrix; pivots are floored at
/// `1e-12` so rank-deficient input still factors.
pub fn cholesky3(c: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (c[i][i] - s).max(1e-12).sqrt();
            } else {
                l[i][j] = (c[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Per-pixel variance of `low − reference` implied by per-sample variances:
/// `σ²_p (1/N_low + 1/N_ref)`.
pub fn residual_variance(sample_variance: &[Rgb], low_spp: u64, reference_spp: u64) -> Vec<Rgb> {
    let f = 1.0 / low_spp as f64 + 1.0 / reference_spp as f64;
    sample_variance.iter().map(|v| v.map(|c| c.max(0.0) * f)).collect()
}

/// Compares low-sample residuals `low − reference` against variance-matched Gaussian noise.
///
/// `residual_var` is the per-pixel variance of the residual (see
/// [`residual_variance`]); it is required for [`NoiseMatch::PerPixel`]. Gaussian patches
/// are drawn at the same positions as the residual patches, so per-pixel
/// matching follows the spatial variance pattern. Bandwidths come from the
/// residual and first Gaussian set and are reused for every baseline pair.
#[allow(clippy::too_many_arguments)]
pub fn mc_vs_gaussian_gap(
    low: &LinearImage,
    residual_var: Option<&[Rgb]>,
    reference: &LinearImage,
    spp: u64,
    schedule: &NoiseSchedule,
    mapped_t: usize,
    config: &GapConfig,
) -> Result<GapReport, MetricError> {
    config.metrics.validate()?;
    if (low.width, low.height) != (reference.width, reference.height) {
        return Err(MetricError::ImageMismatch(low.width, low.height, reference.width, reference.height));
    }
    let (w, h, p) = (low.width, low.height, config.patch_size);
    if p == 0 || p > w || p > h {
        return Err(MetricError::PatchTooLarge {
            patch: p,
            width: w,
            height: h,
        });
    }
    if config.n_patches < 2 || config.baseline_pairs == 0 {
        return Err(MetricError::TooFewItems {
            need: 2,
            got: config.n_patches,
        });
    }
    let residual: Vec<Rgb> = low.pixels.iter().zip(&reference.pixels).map(|(a, b)| *a - *b).collect();
    let std_field: Vec<Rgb> = match config.noise {
        NoiseMatch::PerPixel => {
            let var = residual_var.ok_or_else(|| MetricError::Config("per-pixel matching needs residual variances".into()))?;
            if var.len() != residual.len() {
                return Err(MetricError::Config("variance field size differs from the image".into()));
            }
            var.iter().map(|v| v.map(|c| c.max(0.0).sqrt())).collect()
        }
        NoiseMatch::PerChannel => {
            let n = residual.len() as f64;
            let mean = residual.iter().fold(Rgb::ZERO, |a, r| a + *r) / n;
            let var = residual.iter().fold(Rgb::ZERO, |a, r| a + (*r - mean).mul_elem(*r - mean)) / n;
            vec![var.map(f64::sqrt); residual.len()]
        }
        NoiseMatch::Schedule { kappa } => {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(MetricError::Config("kappa must be positive".into()));
            }
            let sd = schedule.sigma_vp(mapped_t) * kappa.sqrt();
            vec![Rgb::splat(sd); residual.len()]
        }
    };

    // A residual that vanishes identically (low and reference are one render)
    // is a point mass, matched by zero noise in every mode.
    let std_field = if residual.iter().all(|r| *r == Rgb::ZERO) {
        vec![Rgb::ZERO; residual.len()]
    } else {
        std_field
    };
    let chol = match config.noise {
        NoiseMatch::Schedule { .. } => IDENTITY3,
        _ if config.correlate_channels => cholesky3(&channel_correlation(&residual, &std_field)),
        _ => IDENTITY3,
    };

    let corners = patch_corners(w, h, p, config.n_patches, config.seed);
    let resid = SampleSet::new(3, p, p, extract(&residual, w, p, &corners))?;
    let gauss = |stream: u64| SampleSet::new(3, p, p, gaussian_patches(&std_field, w, p, &corners, &chol, config.seed, stream));
    let g0 = gauss(0)?;

    let pooled_r = mean_pool(&resid, config.metrics.pool_factor)?;
    let pooled_g = mean_pool(&g0, config.metrics.pool_factor)?;
    let bandwidths = resolve_bandwidths(&pooled_r, &pooled_g, &config.metrics.mmd_bandwidths);
    let fixed = MetricConfig {
        mmd_bandwidths: Bandwidths::Fixed(bandwidths.clone()),
        ..config.metrics.clone()
    };

    let mmd = mmd_rbf_raw(&resid, &g0, &fixed)?;
    let moment = moment_distance(&resid, &g0)?;
    let spectral = spectral_distance(&resid, &g0, &fixed)?;
    let range = range_penalty(&resid, &g0, &fixed)?;

    let (mut mb, mut momb, mut sb) = (0.0, 0.0, 0.0);
    for k in 0..config.baseline_pairs as u64 {
        let a = gauss(1 + 2 * k)?;
        let b = gauss(2 + 2 * k)?;
        mb += mmd_rbf_raw(&a, &b, &fixed)?.abs();
        momb += moment_distance(&a, &b)?;
        sb += spectral_distance(&a, &b, &fixed)?;
    }
    let np = config.baseline_pairs as f64;
    Ok(GapReport {
        spp,
        mapped_t,
        mmd,
        mmd_baseline: mb / np,
        moment,
        moment_baseline: momb / np,
        spectral,
        spectral_baseline: sb / np,
        range_penalty: range,
        bandwidths,
    })
}

pub const GAP_HEADER: &str = "spp,mapped_t,mmd,mmd_baseline,moment,spectral,range_penalty";

pub fn gap_params_line(config: &GapConfig) -> String {
    format!(
        "# n_patches={} patch_size={} seed={} noise_match={} correlate_channels={} baseline_pairs={} pool_factor={} fft_pool_factor={} range_k_sigma={}",
        config.n_patches,
        config.patch_size,
        config.seed,
        config.noise.name(),
        config.correlate_channels,
        config.baseline_pairs,
        config.metrics.pool_factor,
        config.metrics.fft_pool_factor,
        config.metrics.range_k_sigma
    )
}

pub fn write_gap_csv(path: &Path, config: &GapConfig, rows: &[GapReport]) -> Result<(), MetricError> {
    let io = |e: std::io::Error| MetricError::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{}", gap_params_line(config)).map_err(io)?;
    writeln!(w, "{GAP_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.spp, r.mapped_t, r.mmd, r.mmd_baseline, r.moment, r.spectral, r.range_penalty
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
