//! Discrete diffusion schedules and their alignment with Monte Carlo sample counts.
//!
//! A schedule stores, for `t = 1..=T`, the signal coefficient `ᾱ(t)` of
//! `x_t = ᾱ x₀ + σ_VP ε`, the noise scale `σ_VP = √(1 − ᾱ²)` and the log-SNR
//! `λ(t) = log ᾱ² − log σ_VP²`. The Monte Carlo side has
//! `λ_MC(τ) = A − 2 log τ`, and [`TauMapper`] matches the two curves.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::sde::tau_of_n;

/// Cap on a single step's β in the squared-cosine schedule.
pub const COSINE_BETA_MAX: f64 = 0.999;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("invalid beta range [{start}, {end}]: need 0 < start <= end < 1")]
    InvalidBeta { start: f64, end: f64 },
    #[error("cosine offset must be finite and positive, got {0}")]
    InvalidOffset(f64),
    #[error("alpha_bar^2 at t = {t} is {value}; need a strictly decreasing sequence in (0, 1)")]
    NotMonotone { t: usize, value: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("sample range requires 0 < n_min < n_max, got [{n_min}, {n_max}]")]
    InvalidRange { n_min: f64, n_max: f64 },
    #[error("relative accuracy undefined for a zero mean")]
    ZeroMean,
    #[error("schedule file {path}: {message}")]
    Format { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

fn positive(name: &'static str, value: f64) -> Result<f64, ScheduleError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ScheduleError::NonPositive { name, value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown schedule kind `{other}` (expected linear or cosine)")),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// Immutable schedule; entry `i` of each table belongs to timestep `t = i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    sigma_vp: Vec<f64>,
    log_snr: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the tables from `ln ᾱ(t)²`, which keeps `σ_VP² = −expm1(ln ᾱ²)` accurate near `t = 1`.
    pub fn from_log_alpha_bar_sq(log_a2: &[f64]) -> Result<Self, ScheduleError> {
        if log_a2.len() < 2 {
            return Err(ScheduleError::TooFewSteps(log_a2.len()));
        }
        for (i, &l) in log_a2.iter().enumerate() {
            let bad = !(l < 0.0 && l.is_finite()) || (i > 0 && l >= log_a2[i - 1]);
            if bad {
                return Err(ScheduleError::NotMonotone { t: i + 1, value: l.exp() });
            }
        }
        let alpha_bar = log_a2.iter().map(|&l| (0.5 * l).exp()).collect();
        let sigma_vp = log_a2.iter().map(|&l| (-l.exp_m1()).sqrt()).collect();
        let log_snr = log_a2.iter().map(|&l| l - (-l.exp_m1()).ln()).collect();
        Ok(Self {
            alpha_bar,
            sigma_vp,
            log_snr,
        })
    }

    pub fn from_alpha_bar_sq(a2: &[f64]) -> Result<Self, ScheduleError> {
        let logs: Vec<f64> = a2.iter().map(|&v| v.ln()).collect();
        Self::from_log_alpha_bar_sq(&logs).map_err(|e| match e {
            ScheduleError::NotMonotone { t, .. } => ScheduleError::NotMonotone { t, value: a2[t - 1] },
            e => e,
        })
    }

    /// `ᾱ(t)² = ∏_{s≤t} (1 − β_s)` with `β` linear from `beta_start` to `beta_end`.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if num_steps < 2 {
            return Err(ScheduleError::TooFewSteps(num_steps));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(ScheduleError::InvalidBeta {
                start: beta_start,
                end: beta_end,
            });
        }
        let betas = (0..num_steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64);
        Self::from_betas(betas)
    }

    /// DDPM stand-in: `T = 1000`, `β ∈ [1e-4, 0.02]`.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default schedule")
    }

    /// Squared-cosine profile `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`, with
    /// `β_t = min(1 − f(t)/f(t−1), 0.999)`.
    pub fn cosine(num_steps: usize, offset_s: f64) -> Result<Self, ScheduleError> {
        if num_steps < 2 {
            return Err(ScheduleError::TooFewSteps(num_steps));
        }
        if !(offset_s > 0.0 && offset_s.is_finite()) {
            return Err(ScheduleError::InvalidOffset(offset_s));
        }
        let f = |t: usize| {
            let x = (t as f64 / num_steps as f64 + offset_s) / (1.0 + offset_s) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let betas = (1..=num_steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, COSINE_BETA_MAX));
        Self::from_betas(betas)
    }

    pub fn default_cosine() -> Self {
        Self::cosine(1000, 0.008).expect("valid default schedule")
    }

    fn from_betas(betas: impl Iterator<Item = f64>) -> Result<Self, ScheduleError> {
        let mut acc = 0.0;
        let logs: Vec<f64> = betas
            .map(|b| {
                acc += (-b).ln_1p();
                acc
            })
            .collect();
        Self::from_log_alpha_bar_sq(&logs)
    }

    pub fn build(kind: ScheduleKind, num_steps: usize) -> Result<Self, ScheduleError> {
        match kind {
            ScheduleKind::Linear => Self::linear(num_steps, 1e-4, 0.02),
            ScheduleKind::Cosine => Self::cosine(num_steps, 0.008),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!((1..=self.num_steps()).contains(&t), "timestep {t} outside [1, {}]", self.num_steps());
        t - 1
    }

    /// `ᾱ(t)`; `ᾱ(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[self.idx(t)]
        }
    }

    pub fn sigma_vp(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.sigma_vp[self.idx(t)]
        }
    }

    pub fn log_snr(&self, t: usize) -> f64 {
        self.log_snr[self.idx(t)]
    }

    /// `λ(t)` for `t = 1..=T`.
    pub fn log_snr_table(&self) -> &[f64] {
        &self.log_snr
    }

    /// `η(t) = σ_VP²/ᾱ² = e^{−λ(t)}`.
    pub fn effective_noise(&self, t: usize) -> f64 {
        (-self.log_snr(t)).exp()
    }

    /// Largest `|λ(t+1) − λ(t)|` over the table.
    pub fn max_adjacent_gap(&self) -> f64 {
        self.log_snr.windows(2).map(|w| (w[0] - w[1]).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScheduleError> {
        let io = |e: std::io::Error| ScheduleError::Io(format!("{}: {e}", path.display()));
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "t,alpha_bar,sigma_vp,log_snr").map_err(io)?;
        for t in 1..=self.num_steps() {
            writeln!(w, "{t},{},{},{}", self.alpha_bar(t), self.sigma_vp(t), self.log_snr(t)).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a CSV written by [`NoiseSchedule::write_csv`]. Tables are rebuilt
    /// from the `alpha_bar` column.
    pub fn read_csv(path: &Path) -> Result<Self, ScheduleError> {
        let fmt = |message: String| ScheduleError::Format {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| ScheduleError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t,alpha_bar,sigma_vp,log_snr") {
            return Err(fmt("expected header t,alpha_bar,sigma_vp,log_snr".into()));
        }
        let mut logs = Vec::new();
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(fmt(format!("row {} has {} columns", row + 1, cols.len())));
            }
            let t: usize = cols[0].trim().parse().map_err(|_| fmt(format!("row {}: bad t", row + 1)))?;
            if t != row + 1 {
                return Err(fmt(format!("row {} has t = {t}", row + 1)));
            }
            let a: f64 = cols[1].trim().parse().map_err(|_| fmt(format!("row {}: bad alpha_bar", row + 1)))?;
            logs.push(2.0 * a.ln());
        }
        Self::from_log_alpha_bar_sq(&logs)
    }
}

/// `λ_MC(τ) = log κ − log σ² − 2 log τ`.
pub fn log_snr_mc(tau: f64, kappa: f64, sigma: f64) -> Result<f64, ScheduleError> {
    let tau = positive("tau", tau)?;
    let kappa = positive("kappa", kappa)?;
    let sigma = positive("sigma", sigma)?;
    Ok(kappa.ln() - 2.0 * sigma.ln() - 2.0 * tau.ln())
}

/// Mean of the two anchor solutions `λ(T) = A − 2 log τ_max` and
/// `λ(1) = A − 2 log τ_min`, with `τ_max = n_min^{-1/2}` and `τ_min = n_max^{-1/2}`.
pub fn compute_anchor(schedule: &NoiseSchedule, n_min: f64, n_max: f64) -> Result<f64, ScheduleError> {
    check_range(n_min, n_max)?;
    let tau_max = n_min.powf(-0.5);
    let tau_min = n_max.powf(-0.5);
    Ok(anchor_from_taus(schedule, tau_min, tau_max))
}

pub fn anchor_from_taus(schedule: &NoiseSchedule, tau_min: f64, tau_max: f64) -> f64 {
    let noisy = schedule.log_snr(schedule.num_steps()) + 2.0 * tau_max.ln();
    let clean = schedule.log_snr(1) + 2.0 * tau_min.ln();
    0.5 * (noisy + clean)
}

fn check_range(n_min: f64, n_max: f64) -> Result<(), ScheduleError> {
    if n_min > 0.0 && n_max.is_finite() && n_min < n_max {
        Ok(())
    } else {
        Err(ScheduleError::InvalidRange { n_min, n_max })
    }
}

/// Outcome of one `τ → t*` lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapResult {
    pub tau: f64,
    pub lambda_target: f64,
    pub t_star: usize,
    pub lambda_at_t_star: f64,
    /// `λ(t*) − λ_target`.
    pub residual: f64,
}

/// Anchored `τ ↔ t` alignment over one schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TauMapper {
    pub anchor_a: f64,
    pub schedule: NoiseSchedule,
    pub n_min: f64,
    pub n_max: f64,
}

impl TauMapper {
    pub fn new(schedule: NoiseSchedule, n_min: f64, n_max: f64) -> Result<Self, ScheduleError> {
        let anchor_a = compute_anchor(&schedule, n_min, n_max)?;
        Ok(Self {
            anchor_a,
            schedule,
            n_min,
            n_max,
        })
    }

    /// Anchor `A = log κ − log σ²` supplied directly.
    pub fn with_anchor(schedule: NoiseSchedule, anchor_a: f64, n_min: f64, n_max: f64) -> Result<Self, ScheduleError> {
        check_range(n_min, n_max)?;
        Ok(Self {
            anchor_a,
            schedule,
            n_min,
            n_max,
        })
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.n_max.powf(-0.5), self.n_min.powf(-0.5))
    }

    pub fn lambda_target(&self, tau: f64) -> f64 {
        self.anchor_a - 2.0 * tau.ln()
    }

    pub fn map_tau(&self, tau: f64) -> Result<MapResult, ScheduleError> {
        let tau = positive("tau", tau)?;
        let target = self.lambda_target(tau);
        let t = nearest_decreasing(self.schedule.log_snr_table(), target) + 1;
        let lam = self.schedule.log_snr(t);
        Ok(MapResult {
            tau,
            lambda_target: target,
            t_star: t,
            lambda_at_t_star: lam,
            residual: lam - target,
        })
    }

    pub fn map_samples(&self, n_samples: f64) -> Result<MapResult, ScheduleError> {
        let tau = tau_of_n(n_samples).map_err(|_| ScheduleError::NonPositive {
            name: "n_samples",
            value: n_samples,
        })?;
        self.map_tau(tau)
    }
}

/// `map_tau_to_t` as a free function; returns `t*`.
pub fn map_tau_to_t(mapper: &TauMapper, tau: f64) -> Result<usize, ScheduleError> {
    Ok(mapper.map_tau(tau)?.t_star)
}

/// Index minimising `|table[i] − target|` over a strictly decreasing table,
/// preferring the smaller index on ties.
fn nearest_decreasing(table: &[f64], target: f64) -> usize {
    // First index whose value is <= target.
    let hi = table.partition_point(|&v| v > target);
    match hi {
        0 => 0,
        n if n == table.len() => n - 1,
        hi => {
            let lo = hi - 1;
            let d_lo = table[lo] - target;
            let d_hi = target - table[hi];
            if d_hi < d_lo {
                hi
            } else {
                lo
            }
        }
    }
}

pub const MAP_CSV_HEADER: &str = "N,tau,lambda_target,t_star,lambda_at_t_star,residual";

pub fn map_csv_row(n_samples: f64, r: &MapResult) -> String {
    format!(
        "{n_samples},{},{},{},{},{}",
        r.tau, r.lambda_target, r.t_star, r.lambda_at_t_star, r.residual
    )
}

/// Appends one row, writing the header first when the file is new or empty.
pub fn append_map_csv(path: &Path, n_samples: f64, r: &MapResult) -> Result<(), ScheduleError> {
    let io = |e: std::io::Error| ScheduleError::Io(format!("{}: {e}", path.display()));
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    if fresh {
        writeln!(f, "{MAP_CSV_HEADER}").map_err(io)?;
    }
    writeln!(f, "{}", map_csv_row(n_samples, r)).map_err(io)
}

/// Power-law spectrum model `S(f) ≍ |f|^{−p}` giving `f_c = scale · η^{−1/p}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandwidthModel {
    pub p_spec: f64,
    pub bandwidth_scale: f64,
}

impl BandwidthModel {
    pub fn new(p_spec: f64, bandwidth_scale: f64) -> Result<Self, ScheduleError> {
        Ok(Self {
            p_spec: positive("p_spec", p_spec)?,
            bandwidth_scale: positive("bandwidth_scale", bandwidth_scale)?,
        })
    }
}

impl Default for BandwidthModel {
    fn default() -> Self {
        Self {
            p_spec: 2.0,
            bandwidth_scale: 1.0,
        }
    }
}

pub fn recoverable_bandwidth(effective_noise: f64, model: &BandwidthModel) -> Result<f64, ScheduleError> {
    let eta = positive("effective_noise", effective_noise)?;
    Ok(model.bandwidth_scale * eta.powf(-1.0 / model.p_spec))
}

/// Diffusion-side cutoff `f_c(t)` from `η(t) = σ_VP(t)²/ᾱ(t)²`.
pub fn diffusion_bandwidth(schedule: &NoiseSchedule, model: &BandwidthModel, t: usize) -> f64 {
    model.bandwidth_scale * (schedule.log_snr(t) / model.p_spec).exp()
}

/// A timestep or the "unreachable" sentinel, which orders after every timestep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stabilization {
    At(usize),
    Never,
}

impl std::fmt::Display for Stabilization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::At(t) => write!(f, "{t}"),
            Self::Never => f.write_str("never"),
        }
    }
}

/// Smallest `t` with `f_c(t) ≥ f_target`. `f_c` decreases in `t`, so the
/// answer is the cleanest step or `Never`.
pub fn stabilization_time(
    schedule: &NoiseSchedule,
    model: &BandwidthModel,
    f_target: f64,
) -> Result<Stabilization, ScheduleError> {
    positive("f_target", f_target)?;
    Ok((1..=schedule.num_steps())
        .find(|&t| diffusion_bandwidth(schedule, model, t) >= f_target)
        .map_or(Stabilization::Never, Stabilization::At))
}

/// Noisiest `t` with `f_c(t) ≥ f_target`: the first step of the reverse
/// trajectory at which content at `f_target` is recoverable.
pub fn recovery_onset(
    schedule: &NoiseSchedule,
    model: &BandwidthModel,
    f_target: f64,
) -> Result<Stabilization, ScheduleError> {
    positive("f_target", f_target)?;
    let count = schedule
        .log_snr_table()
        .partition_point(|&l| diffusion_cut(l, model) >= f_target);
    Ok(if count == 0 {
        Stabilization::Never
    } else {
        Stabilization::At(count)
    })
}

fn diffusion_cut(lambda: f64, model: &BandwidthModel) -> f64 {
    model.bandwidth_scale * (lambda / model.p_spec).exp()
}

/// Reverse steps taken from `t = T` before `f_target` becomes recoverable, or `None` if it never does.
pub fn reverse_steps_until_recoverable(
    schedule: &NoiseSchedule,
    model: &BandwidthModel,
    f_target: f64,
) -> Result<Option<usize>, ScheduleError> {
    Ok(match recovery_onset(schedule, model, f_target)? {
        Stabilization::At(t) => Some(schedule.num_steps() - t),
        Stabilization::Never => None,
    })
}

/// `τ* = ε|μ|/σ` and `N* = (τ*)^{−2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyScale {
    pub tau_star: f64,
    pub n_star: f64,
}

pub fn min_samples_for_accuracy(mu_r: f64, sigma_r: f64, epsilon: f64) -> Result<AccuracyScale, ScheduleError> {
    if mu_r == 0.0 {
        return Err(ScheduleError::ZeroMean);
    }
    if !mu_r.is_finite() {
        return Err(ScheduleError::NonPositive { name: "|mu_r|", value: mu_r });
    }
    let sigma_r = positive("sigma_r", sigma_r)?;
    let epsilon = positive("epsilon", epsilon)?;
    let tau_star = epsilon * mu_r.abs() / sigma_r;
    let n_star = (sigma_r * sigma_r) / (epsilon * epsilon * mu_r * mu_r);
    Ok(AccuracyScale { tau_star, n_star })
}

impl PartialOrd for AccuracyScale {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.n_star.partial_cmp(&other.n_star)
    }
}
