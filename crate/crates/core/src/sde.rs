//! The Monte Carlo SDE in variance time `τ = N^{-1/p}`.
//!
//! For `N(τ) = τ^{-p}` the estimator `Y(τ) = X_{N(τ)}` follows
//!
//! ```text
//! dY = p (Y − μ)/τ dτ + σ √p τ^{(p−1)/2} dW
//! ```
//!
//! integrated in decreasing `τ`. With `p = 2` this is the reverse-time SDE of
//! the clean-start variance-exploding process `dX = σ√(2τ) dW`, `X(0) = μ`,
//! whose marginal is `N(μ, σ²τ²)`.

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::CounterRng;

/// Smallest variance time a simulation grid may reach.
pub const TAU_FLOOR: f64 = 1e-4;

/// Relative diagonal jitter applied when factorising a singular covariance.
pub const PSD_JITTER: f64 = 1e-12;

/// `Φ⁻¹(0.995)`, the two-sided 99% standard normal quantile.
pub const NORMAL_Q995: f64 = 2.575_829_303_548_901;

#[derive(Debug, Error, PartialEq)]
pub enum SdeError {
    #[error("sample count must be positive, got {0}")]
    NonPositiveSamples(f64),
    #[error("variance time must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("sigma must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("exponent p must exceed 1, got {0}")]
    InvalidExponent(f64),
    #[error("tau grid must run strictly downward from tau_start to tau_end > 0 (got {start} -> {end})")]
    InvalidGrid { start: f64, end: f64 },
    #[error("at least one step is required")]
    NoSteps,
    #[error("covariance is not positive semidefinite (var_d = {var_d}, var_s = {var_s}, cov_ds = {cov_ds})")]
    NotPsd { var_d: f64, var_s: f64, cov_ds: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

/// `τ = N^{-1/2}`.
pub fn tau_of_n(n_samples: f64) -> Result<f64, SdeError> {
    if !(n_samples > 0.0) {
        return Err(SdeError::NonPositiveSamples(n_samples));
    }
    Ok(n_samples.powf(-0.5))
}

/// `N = τ^{-2}`.
pub fn n_of_tau(tau: f64) -> Result<f64, SdeError> {
    check_tau(tau)?;
    Ok(tau.powi(-2))
}

fn check_tau(tau: f64) -> Result<(), SdeError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(SdeError::NonPositiveTau(tau))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeParams {
    pub mu: f64,
    pub sigma: f64,
    pub exponent_p: f64,
}

impl SdeParams {
    pub fn new(mu: f64, sigma: f64, exponent_p: f64) -> Result<Self, SdeError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(SdeError::InvalidSigma(sigma));
        }
        if !(exponent_p > 1.0 && exponent_p.is_finite()) {
            return Err(SdeError::InvalidExponent(exponent_p));
        }
        Ok(Self { mu, sigma, exponent_p })
    }

    /// `p = 2`, the parameterisation `N = τ^{-2}`.
    pub fn standard(mu: f64, sigma: f64) -> Result<Self, SdeError> {
        Self::new(mu, sigma, 2.0)
    }

    pub fn drift(&self, y: f64, tau: f64) -> Result<f64, SdeError> {
        drift(y, self, tau)
    }

    pub fn diffusion_coeff(&self, tau: f64) -> Result<f64, SdeError> {
        diffusion_coeff(self.sigma, self.exponent_p, tau)
    }
}

/// `p (y − μ) / τ`.
pub fn drift(y: f64, params: &SdeParams, tau: f64) -> Result<f64, SdeError> {
    check_tau(tau)?;
    Ok(params.exponent_p * (y - params.mu) / tau)
}

/// `σ √p τ^{(p−1)/2}`. Accepts the boundary exponent `p = 1`, where the
/// coefficient is the constant `σ`.
pub fn diffusion_coeff(sigma: f64, exponent_p: f64, tau: f64) -> Result<f64, SdeError> {
    check_tau(tau)?;
    if !(exponent_p >= 1.0) {
        return Err(SdeError::InvalidExponent(exponent_p));
    }
    Ok(sigma * exponent_p.sqrt() * tau.powf((exponent_p - 1.0) / 2.0))
}

/// Marginal `(mean, variance)` of the drift-free forward process at `τ`:
/// `(μ, σ² τ^p)`, which is `σ²τ²` for the standard exponent.
pub fn ve_forward_marginal(params: &SdeParams, tau: f64) -> Result<(f64, f64), SdeError> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(SdeError::NonPositiveTau(tau));
    }
    Ok((params.mu, params.sigma * params.sigma * tau.powf(params.exponent_p)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GridSpacing {
    #[default]
    Geometric,
    Linear,
}

/// Strictly decreasing, strictly positive grid of variance times.
#[derive(Clone, Debug, PartialEq)]
pub struct TauGrid {
    taus: Vec<f64>,
}

impl TauGrid {
    /// `n_steps + 1` points from `tau_start` down to `max(tau_end, TAU_FLOOR)`.
    pub fn new(tau_start: f64, tau_end: f64, n_steps: usize, spacing: GridSpacing) -> Result<Self, SdeError> {
        if n_steps == 0 {
            return Err(SdeError::NoSteps);
        }
        if !(tau_end > 0.0 && tau_start.is_finite() && tau_start > tau_end) {
            return Err(SdeError::InvalidGrid {
                start: tau_start,
                end: tau_end,
            });
        }
        let end = tau_end.max(TAU_FLOOR);
        if tau_start <= end {
            return Err(SdeError::InvalidGrid {
                start: tau_start,
                end,
            });
        }
        let taus = (0..=n_steps)
            .map(|i| {
                let f = i as f64 / n_steps as f64;
                match (i, spacing) {
                    (0, _) => tau_start,
                    (i, _) if i == n_steps => end,
                    (_, GridSpacing::Geometric) => (tau_start.ln() + f * (end.ln() - tau_start.ln())).exp(),
                    (_, GridSpacing::Linear) => tau_start + f * (end - tau_start),
                }
            })
            .collect();
        Ok(Self { taus })
    }

    pub fn from_taus(taus: Vec<f64>) -> Result<Self, SdeError> {
        let ok = taus.len() >= 2 && taus.iter().all(|&t| t > 0.0 && t.is_finite()) && taus.windows(2).all(|w| w[1] < w[0]);
        if !ok {
            return Err(SdeError::InvalidGrid {
                start: taus.first().copied().unwrap_or(f64::NAN),
                end: taus.last().copied().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    /// `count` grid indices spread evenly over the grid, both ends included.
    pub fn checkpoint_indices(&self, count: usize) -> Vec<usize> {
        let last = self.steps();
        let count = count.clamp(2, last + 1);
        let mut idx: Vec<usize> = (0..count)
            .map(|i| ((i as f64 / (count - 1) as f64) * last as f64).round() as usize)
            .collect();
        idx.dedup();
        idx
    }
}

/// State sequence over a [`TauGrid`]. `values` holds one `D`-vector per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<const D: usize> {
    pub taus: Vec<f64>,
    pub values: Vec<[f64; D]>,
}

pub type ScalarTrajectory = Trajectory<1>;
pub type VectorTrajectory = Trajectory<2>;

impl ScalarTrajectory {
    pub fn scalar_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| v[0])
    }

    pub fn last_value(&self) -> f64 {
        self.values.last().map_or(f64::NAN, |v| v[0])
    }
}

impl VectorTrajectory {
    pub fn totals(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| v[0] + v[1])
    }
}

#[inline]
fn normal(rng: &mut CounterRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Euler–Maruyama integration of the scalar MC-SDE down the grid.
pub fn simulate_reverse(params: &SdeParams, grid: &TauGrid, init: f64, rng: &mut CounterRng) -> ScalarTrajectory {
    let taus = grid.taus();
    let mut values = Vec::with_capacity(taus.len());
    let mut y = init;
    values.push([y]);
    let p = params.exponent_p;
    for w in taus.windows(2) {
        let (tau, next) = (w[0], w[1]);
        let dt = next - tau;
        let b = params.sigma * p.sqrt() * tau.powf((p - 1.0) / 2.0);
        let noise = if params.sigma > 0.0 { b * (-dt).sqrt() * normal(rng) } else { 0.0 };
        y += p * (y - params.mu) / tau * dt + noise;
        values.push([y]);
    }
    ScalarTrajectory {
        taus: taus.to_vec(),
        values,
    }
}

/// Draws from the forward marginal `N(μ, σ²τ^p)`.
pub fn sample_ve_marginal(params: &SdeParams, tau: f64, rng: &mut CounterRng) -> f64 {
    let sd = (params.sigma * params.sigma * tau.powf(params.exponent_p)).sqrt();
    params.mu + sd * normal(rng)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitMode {
    /// Every trajectory starts at the given value.
    Fixed(f64),
    /// Each trajectory starts from an independent draw of the forward marginal at `τ_start`.
    ForwardMarginal,
}

/// Independent reverse trajectories; trajectory `i` uses the stream `(seed, i)`.
pub fn simulate_ensemble(
    params: &SdeParams,
    grid: &TauGrid,
    n_trajectories: usize,
    init: InitMode,
    seed: u64,
) -> Vec<ScalarTrajectory> {
    let tau0 = grid.taus()[0];
    (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::new(seed, &[i as u64]);
            let y0 = match init {
                InitMode::Fixed(v) => v,
                InitMode::ForwardMarginal => sample_ve_marginal(params, tau0, &mut rng),
            };
            simulate_reverse(params, grid, y0, &mut rng)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalRow {
    pub tau: f64,
    pub mean: f64,
    pub var: f64,
    pub expected_var: f64,
}

impl MarginalRow {
    pub fn standard_error(&self, n: usize) -> f64 {
        (self.var / n as f64).sqrt()
    }
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    (mean, if n > 1.0 { m2 / (n - 1.0) } else { 0.0 })
}

/// Ensemble mean and variance at the requested grid indices next to the
/// forward-marginal variance `σ²τ^p`.
pub fn marginal_summary(params: &SdeParams, ensemble: &[ScalarTrajectory], indices: &[usize]) -> Vec<MarginalRow> {
    indices
        .iter()
        .map(|&k| {
            let tau = ensemble[0].taus[k];
            let (mean, var) = mean_var(ensemble.iter().map(|t| t.values[k][0]));
            MarginalRow {
                tau,
                mean,
                var,
                expected_var: params.sigma * params.sigma * tau.powf(params.exponent_p),
            }
        })
        .collect()
}

/// Symmetric 2×2 covariance of the (diffuse, specular) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovMatrix2 {
    pub var_d: f64,
    pub var_s: f64,
    pub cov_ds: f64,
}

impl CovMatrix2 {
    pub fn new(var_d: f64, var_s: f64, cov_ds: f64) -> Self {
        Self { var_d, var_s, cov_ds }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.var_d + self.var_s
    }

    pub fn det(&self) -> f64 {
        self.var_d * self.var_s - self.cov_ds * self.cov_ds
    }

    fn tolerance(&self) -> f64 {
        1e-12 * (self.trace().abs().max(self.cov_ds.abs())).max(f64::MIN_POSITIVE) * self.trace().abs().max(1.0)
    }

    pub fn is_psd(&self) -> bool {
        let eps = self.tolerance();
        self.var_d.is_finite()
            && self.var_s.is_finite()
            && self.cov_ds.is_finite()
            && self.var_d >= -eps
            && self.var_s >= -eps
            && self.det() >= -eps
    }

    /// Variance of the summed component, `σ_d² + 2σ_ds + σ_s²`.
    pub fn total_variance(&self) -> f64 {
        self.var_d + 2.0 * self.cov_ds + self.var_s
    }
}

/// Lower-triangular factor `[[l00, 0], [l10, l11]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lower2 {
    pub l00: f64,
    pub l10: f64,
    pub l11: f64,
}

impl Lower2 {
    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        [self.l00 * z[0], self.l10 * z[0] + self.l11 * z[1]]
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> CovMatrix2 {
        CovMatrix2::new(self.l00 * self.l00, self.l10 * self.l10 + self.l11 * self.l11, self.l00 * self.l10)
    }
}

/// Cholesky factor of a PSD 2×2 matrix. Singular inputs receive diagonal
/// jitter `1e-12 · trace`.
pub fn cholesky2(cov: &CovMatrix2) -> Result<Lower2, SdeError> {
    if !cov.is_psd() {
        return Err(SdeError::NotPsd {
            var_d: cov.var_d,
            var_s: cov.var_s,
            cov_ds: cov.cov_ds,
        });
    }
    let trace = cov.trace();
    let factor = |a: f64, b: f64, c: f64| -> Option<Lower2> {
        if a <= 0.0 {
            return None;
        }
        let l00 = a.sqrt();
        let l10 = c / l00;
        let rem = b - l10 * l10;
        (rem > 0.0).then(|| Lower2 { l00, l10, l11: rem.sqrt() })
    };
    if let Some(l) = factor(cov.var_d, cov.var_s, cov.cov_ds) {
        return Ok(l);
    }
    if trace <= 0.0 {
        return Ok(Lower2 {
            l00: 0.0,
            l10: 0.0,
            l11: 0.0,
        });
    }
    let j = PSD_JITTER * trace;
    let (a, b) = (cov.var_d.max(0.0) + j, cov.var_s.max(0.0) + j);
    let c = cov.cov_ds.clamp(-(a * b).sqrt(), (a * b).sqrt());
    Ok(factor(a, b, c).unwrap_or(Lower2 {
        l00: a.sqrt(),
        l10: c / a.sqrt(),
        l11: 0.0,
    }))
}

/// Euler–Maruyama for the correlated two-component SDE
/// `dY = p (Y − μ)/τ dτ + √p τ^{(p−1)/2} Σ^{1/2} dB`.
pub fn simulate_vector_reverse(
    mu: [f64; 2],
    cov: &CovMatrix2,
    exponent_p: f64,
    grid: &TauGrid,
    init: [f64; 2],
    rng: &mut CounterRng,
) -> Result<VectorTrajectory, SdeError> {
    if !(exponent_p > 1.0) {
        return Err(SdeError::InvalidExponent(exponent_p));
    }
    let l = if cov.trace() == 0.0 && cov.cov_ds == 0.0 {
        Lower2 {
            l00: 0.0,
            l10: 0.0,
            l11: 0.0,
        }
    } else {
        cholesky2(cov)?
    };
    let noisy = l != Lower2 { l00: 0.0, l10: 0.0, l11: 0.0 };
    let p = exponent_p;
    let taus = grid.taus();
    let mut y = init;
    let mut values = Vec::with_capacity(taus.len());
    values.push(y);
    for w in taus.windows(2) {
        let (tau, next) = (w[0], w[1]);
        let dt = next - tau;
        let scale = p.sqrt() * tau.powf((p - 1.0) / 2.0) * (-dt).sqrt();
        let dw = if noisy { l.apply([normal(rng), normal(rng)]) } else { [0.0, 0.0] };
        for c in 0..2 {
            y[c] += p * (y[c] - mu[c]) / tau * dt + scale * dw[c];
        }
        values.push(y);
    }
    Ok(VectorTrajectory {
        taus: taus.to_vec(),
        values,
    })
}

/// Vector ensemble started from the forward marginal `N(μ, Σ τ_start^p)`.
pub fn simulate_vector_ensemble(
    mu: [f64; 2],
    cov: &CovMatrix2,
    exponent_p: f64,
    grid: &TauGrid,
    n_trajectories: usize,
    seed: u64,
) -> Result<Vec<VectorTrajectory>, SdeError> {
    let l = cholesky2(cov)?;
    let tau0 = grid.taus()[0];
    let sd = tau0.powf(exponent_p / 2.0);
    (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::new(seed, &[i as u64]);
            let z = l.apply([normal(&mut rng), normal(&mut rng)]);
            let init = [mu[0] + sd * z[0], mu[1] + sd * z[1]];
            simulate_vector_reverse(mu, cov, exponent_p, grid, init, &mut rng)
        })
        .collect()
}

/// Quantiles of `|p (Y − μ)/τ|` for `Y` drawn from the CLT marginal `N(μ, σ²τ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftQuantiles {
    pub tau: f64,
    pub mean_abs: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn drift_boundedness_stat(
    params: &SdeParams,
    taus: &[f64],
    ensemble_size: usize,
    seed: u64,
) -> Result<Vec<DriftQuantiles>, SdeError> {
    taus.iter()
        .enumerate()
        .map(|(k, &tau)| {
            check_tau(tau)?;
            let mut rng = CounterRng::new(seed, &[k as u64]);
            let mut abs: Vec<f64> = (0..ensemble_size)
                .map(|_| {
                    let y = params.mu + params.sigma * tau * normal(&mut rng);
                    (params.exponent_p * (y - params.mu) / tau).abs()
                })
                .collect();
            abs.sort_by(f64::total_cmp);
            let mean_abs = abs.iter().sum::<f64>() / abs.len().max(1) as f64;
            Ok(DriftQuantiles {
                tau,
                mean_abs,
                q50: quantile_sorted(&abs, 0.5),
                q90: quantile_sorted(&abs, 0.9),
                q99: quantile_sorted(&abs, 0.99),
                max: abs.last().copied().unwrap_or(0.0),
            })
        })
        .collect()
}

/// `p σ Φ⁻¹(0.995) (1 + δ)`, the τ-independent ceiling for the 99th percentile of `|drift|`.
pub fn drift_q99_bound(params: &SdeParams, slack: f64) -> f64 {
    params.exponent_p * params.sigma * NORMAL_Q995 * (1.0 + slack)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SdeError {
    SdeError::Io(format!("{}: {e}", path.display()))
}

/// Rows `traj_id,tau,value` at the chosen grid indices.
pub fn write_trajectories_csv(path: &Path, ensemble: &[ScalarTrajectory], indices: &[usize]) -> Result<(), SdeError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    writeln!(w, "traj_id,tau,value").map_err(|e| io_err(path, e))?;
    for (i, t) in ensemble.iter().enumerate() {
        for &k in indices {
            writeln!(w, "{i},{},{}", t.taus[k], t.values[k][0]).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Rows `traj_id,tau,value_d,value_s` at the chosen grid indices.
pub fn write_vector_trajectories_csv(
    path: &Path,
    ensemble: &[VectorTrajectory],
    indices: &[usize],
) -> Result<(), SdeError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    writeln!(w, "traj_id,tau,value_d,value_s").map_err(|e| io_err(path, e))?;
    for (i, t) in ensemble.iter().enumerate() {
        for &k in indices {
            let v = t.values[k];
            writeln!(w, "{i},{},{},{}", t.taus[k], v[0], v[1]).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_marginal_csv(path: &Path, rows: &[MarginalRow]) -> Result<(), SdeError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    writeln!(w, "tau,mean,var,expected_var").map_err(|e| io_err(path, e))?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.tau, r.mean, r.var, r.expected_var).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: f64, sigma: f64, p: f64) -> SdeParams {
        SdeParams::new(mu, sigma, p).unwrap()
    }

    #[test]
    fn tau_of_n_examples() {
        assert_eq!(tau_of_n(10_000.0).unwrap(), 0.01);
        assert_eq!(tau_of_n(1.0).unwrap(), 1.0);
        assert!((tau_of_n(0.001).unwrap() - 31.6228).abs() < 1e-4);
        assert!(tau_of_n(0.0).is_err());
        assert!(tau_of_n(-3.0).is_err());
        assert!(tau_of_n(100.0).unwrap() > tau_of_n(101.0).unwrap());
        assert!((n_of_tau(tau_of_n(37.0).unwrap()).unwrap() - 37.0).abs() < 1e-9);
    }

    #[test]
    fn drift_examples() {
        assert_eq!(drift(0.7, &params(0.7, 1.0, 2.0), 0.3).unwrap(), 0.0);
        assert_eq!(drift(0.5, &params(0.0, 1.0, 2.0), 0.25).unwrap(), 4.0);
        assert_eq!(drift(1.0, &params(0.0, 1.0, 3.0), 2.0).unwrap(), 1.5);
        assert!(drift(1.0, &params(0.0, 1.0, 2.0), 0.0).is_err());
    }

    #[test]
    fn diffusion_examples() {
        assert!((diffusion_coeff(1.0, 2.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((diffusion_coeff(2.0, 2.0, 2.0).unwrap() - 4.0).abs() < 1e-15);
        for tau in [1e-3, 0.5, 7.0] {
            assert_eq!(diffusion_coeff(1.7, 1.0, tau).unwrap(), 1.7);
        }
        assert!(diffusion_coeff(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn diffusion_monotone_and_vanishing() {
        for p in [1.1, 1.5, 2.0, 3.0, 5.0] {
            let taus: Vec<f64> = (1..200).map(|i| i as f64 * 0.05).collect();
            let b: Vec<f64> = taus.iter().map(|&t| diffusion_coeff(1.0, p, t).unwrap()).collect();
            assert!(b.windows(2).all(|w| w[1] > w[0]), "p = {p}");
            assert!(diffusion_coeff(1.0, p, 1e-200).unwrap() < 1e-4);
        }
    }

    #[test]
    fn ve_marginal_examples() {
        let p = params(0.3, 1.0, 2.0);
        assert_eq!(ve_forward_marginal(&p, 0.0).unwrap(), (0.3, 0.0));
        assert!((ve_forward_marginal(&p, 0.1).unwrap().1 - 0.01).abs() < 1e-15);
        assert_eq!(ve_forward_marginal(&params(0.0, 2.0, 2.0), 3.0).unwrap().1, 36.0);
    }

    #[test]
    fn params_validation() {
        assert!(SdeParams::new(0.0, -1.0, 2.0).is_err());
        assert!(SdeParams::new(0.0, 1.0, 1.0).is_err());
        assert!(SdeParams::new(0.0, 0.0, 2.0).is_ok());
    }

    #[test]
    fn grid_is_strictly_decreasing_and_floored() {
        let g = TauGrid::new(1.0, 1e-9, 100, GridSpacing::Geometric).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(*g.taus().last().unwrap(), TAU_FLOOR);
        assert!(g.taus().windows(2).all(|w| w[1] < w[0]));
        let g = TauGrid::new(2.0, 0.5, 3, GridSpacing::Linear).unwrap();
        assert_eq!(g.taus(), &[2.0, 1.5, 1.0, 0.5]);
        assert!(TauGrid::new(1.0, 0.0, 10, GridSpacing::Geometric).is_err());
        assert!(TauGrid::new(0.5, 1.0, 10, GridSpacing::Geometric).is_err());
        assert!(TauGrid::new(1.0, 0.5, 0, GridSpacing::Geometric).is_err());
        assert!(TauGrid::from_taus(vec![1.0, 0.5, 0.0]).is_err());
    }

    #[test]
    fn zero_noise_fixed_point() {
        let p = params(0.4, 0.0, 2.0);
        let g = TauGrid::new(1.0, 0.01, 50, GridSpacing::Geometric).unwrap();
        let t = simulate_reverse(&p, &g, 0.4, &mut CounterRng::new(0, &[]));
        assert!(t.scalar_values().all(|v| v == 0.4));
    }

    #[test]
    fn deterministic_flow_matches_closed_form() {
        // Y − μ = (Y₀ − μ)(τ/τ₀)^p solves dY = p (Y − μ)/τ dτ.
        let p = params(1.0, 0.0, 2.0);
        let g = TauGrid::new(1.0, 0.5, 10_000, GridSpacing::Linear).unwrap();
        let t = simulate_reverse(&p, &g, 2.0, &mut CounterRng::new(0, &[]));
        assert!((t.last_value() - 1.25).abs() < 1e-3);
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky2(&CovMatrix2::identity()).unwrap();
        assert_eq!((l.l00, l.l10, l.l11), (1.0, 0.0, 1.0));
        let l = cholesky2(&CovMatrix2::new(4.0, 3.0, 2.0)).unwrap();
        assert!((l.l00 - 2.0).abs() < 1e-15);
        assert!((l.l10 - 1.0).abs() < 1e-15);
        assert!((l.l11 - 2f64.sqrt()).abs() < 1e-15);
        let r = l.reconstruct();
        assert!((r.var_d - 4.0).abs() < 1e-12 && (r.var_s - 3.0).abs() < 1e-12 && (r.cov_ds - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rank_one_gets_jitter() {
        let cov = CovMatrix2::new(1.0, 1.0, 1.0);
        let l = cholesky2(&cov).unwrap();
        assert!((l.l00 - 1.0).abs() < 1e-9 && (l.l10 - 1.0).abs() < 1e-9 && l.l11.abs() < 1e-5);
        let r = l.reconstruct();
        assert!((r.var_d - 1.0).abs() < 1e-9 && (r.var_s - 1.0).abs() < 1e-9 && (r.cov_ds - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky2(&CovMatrix2::new(1.0, 1.0, 2.0)).is_err());
        assert!(cholesky2(&CovMatrix2::new(-1.0, -1.0, 0.0)).is_err());
    }

    #[test]
    fn zero_covariance_vector_flow_is_deterministic() {
        let g = TauGrid::new(1.0, 0.5, 1000, GridSpacing::Geometric).unwrap();
        let cov = CovMatrix2::new(0.0, 0.0, 0.0);
        let a = simulate_vector_reverse([0.0, 1.0], &cov, 2.0, &g, [1.0, 3.0], &mut CounterRng::new(1, &[])).unwrap();
        let b = simulate_vector_reverse([0.0, 1.0], &cov, 2.0, &g, [1.0, 3.0], &mut CounterRng::new(2, &[])).unwrap();
        assert_eq!(a, b);
        let last = *a.values.last().unwrap();
        assert!((last[0] - 0.25).abs() < 2e-3 && (last[1] - 1.5).abs() < 4e-3);
    }

    #[test]
    fn vector_rejects_non_psd() {
        let g = TauGrid::new(1.0, 0.5, 10, GridSpacing::Geometric).unwrap();
        let bad = CovMatrix2::new(1.0, 1.0, 3.0);
        assert!(simulate_vector_reverse([0.0; 2], &bad, 2.0, &g, [0.0; 2], &mut CounterRng::new(0, &[])).is_err());
    }

    #[test]
    fn drift_stat_zero_sigma() {
        let q = drift_boundedness_stat(&params(0.0, 0.0, 2.0), &[1.0, 0.1], 100, 0).unwrap();
        assert!(q.iter().all(|d| d.max == 0.0));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.125), 0.5);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }
}
