//! Analytic specular/diffuse variance ratio under uniform hemisphere sampling.
//!
//! With the incident radiance separated as a constant `L`, the per-sample
//! specular estimand `x_s = DFG · L / (4 cosθ_o · p)` has variance
//! `σ_s² = L²/(16 cos²θ_o) · (2πJ − I²)`, where `I = ∫ DFG dω` and
//! `J = ∫ DFG² dω`. Setting `k_d = 1 − m` bounds the diffuse variance by
//! `σ̂_d² = (1 − m) c² L² / 3`, so `σ_s²/σ_d² > σ_s²/σ̂_d²`.
//!
//! The DFG here is the scalar analysis form, with
//! `D = 4α² / (π[(α² − 1)(n·h) + 1]²)`, Schlick Fresnel on `h·ω_o`, and the
//! Schlick-GGX visibility quotient. It is not the renderer's normalised NDF.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::pathtracer::{render, sample_hemisphere_uniform, Material, PathTracerError, RenderOptions, Scene, Vec3};
use crate::rng::CounterRng;

/// Smallest roughness accepted by sweeps.
pub const ALPHA_FLOOR: f64 = 0.01;
/// Grid-doubling change below which a quadrature counts as converged.
pub const CONVERGED_DELTA: f64 = 0.01;
/// Grid-doubling change above which a quadrature counts as failed.
pub const FAILED_DELTA: f64 = 0.05;
pub const START_GRID: (usize, usize) = (32, 64);
pub const MAX_GRID: (usize, usize) = (512, 1024);
/// Views with `cosθ_o` at or below this are rejected as grazing.
pub const GRAZING_COS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum VarianceError {
    #[error("direction below the hemisphere (n·wo = {cos_o}, n·wi = {cos_i})")]
    BelowHemisphere { cos_o: f64, cos_i: f64 },
    #[error("metallic = 1 leaves no diffuse lobe; the ratio bound is undefined")]
    FullyMetallic,
    #[error("metallic = {0} is outside [0, 1)")]
    InvalidMetallic(f64),
    #[error("grazing view cosθ_o = {0}")]
    GrazingView(f64),
    #[error("roughness {0} is below the floor {ALPHA_FLOOR}")]
    AlphaBelowFloor(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no object in the scene satisfies the selection")]
    NoQualifyingObject,
    #[error(transparent)]
    Render(#[from] PathTracerError),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Literal transcription of the analysis DFG, scalar in `f0`.
pub fn dfg_scalar(alpha: f64, f0: f64, k: f64, cos_o: f64, cos_i: f64, n_dot_h: f64, h_dot_o: f64) -> f64 {
    let a2 = alpha * alpha;
    let t = (a2 - 1.0) * n_dot_h + 1.0;
    let d = 4.0 * a2 / (PI * t * t);
    let f = f0 + (1.0 - f0) * (1.0 - h_dot_o).powi(5);
    let g = cos_i * cos_o / ((cos_i * (1.0 - k) + k) * (cos_o * (1.0 - k) + k));
    d * f * g
}

/// Analysis base reflectance: luminance of the material's own `f0`.
pub fn analysis_f0(material: &Material) -> f64 {
    material.f0.luminance()
}

pub fn dfg(material: &Material, wo: Vec3, wi: Vec3, n: Vec3) -> Result<f64, VarianceError> {
    let cos_o = n.dot(wo);
    let cos_i = n.dot(wi);
    if cos_o <= 0.0 || cos_i <= 0.0 {
        return Err(VarianceError::BelowHemisphere { cos_o, cos_i });
    }
    let h = (wi + wo).normalized();
    let alpha = material.alpha();
    Ok(dfg_scalar(
        alpha,
        analysis_f0(material),
        material.geometry_k_mode.k(alpha),
        cos_o,
        cos_i,
        n.dot(h),
        h.dot(wo),
    ))
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Product rule over the hemisphere around `+z`: Gauss–Legendre in `cosθ ∈ [0, 1]`
/// times the periodic trapezoid rule in `φ`. Weights are in solid angle.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub cos_theta: Vec<f64>,
    pub theta_weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_weight: f64,
}

impl QuadratureGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        assert!(n_theta >= 1 && n_phi >= 1, "empty quadrature grid");
        let (x, w) = gauss_legendre(n_theta);
        Self {
            n_theta,
            n_phi,
            cos_theta: x.iter().map(|&v| 0.5 * (v + 1.0)).collect(),
            theta_weights: w.iter().map(|&v| 0.5 * v).collect(),
            phi: (0..n_phi).map(|j| 2.0 * PI * (j as f64 + 0.5) / n_phi as f64).collect(),
            phi_weight: 2.0 * PI / n_phi as f64,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.theta_weights.iter().sum::<f64>() * self.phi_weight * self.n_phi as f64
    }

    /// `(∫ f dω, ∫ f² dω)`; rows are summed in a fixed order.
    pub fn integrate_pair(&self, f: impl Fn(Vec3) -> f64 + Sync) -> (f64, f64) {
        let rows: Vec<(f64, f64)> = (0..self.n_theta)
            .into_par_iter()
            .map(|a| {
                let c = self.cos_theta[a];
                let s = (1.0 - c * c).max(0.0).sqrt();
                let (mut s1, mut s2) = (0.0, 0.0);
                for &phi in &self.phi {
                    let v = f(Vec3::new(s * phi.cos(), s * phi.sin(), c));
                    s1 += v;
                    s2 += v * v;
                }
                let w = self.theta_weights[a] * self.phi_weight;
                (s1 * w, s2 * w)
            })
            .collect();
        rows.iter().fold((0.0, 0.0), |acc, r| (acc.0 + r.0, acc.1 + r.1))
    }
}

/// View direction in the `xz` plane with `n = +z`.
pub fn view_direction(cos_theta_o: f64) -> Vec3 {
    let s = (1.0 - cos_theta_o * cos_theta_o).max(0.0).sqrt();
    Vec3::new(s, 0.0, cos_theta_o)
}

const NORMAL: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

fn dfg_up(material: &Material, wo: Vec3, wi: Vec3) -> f64 {
    dfg(material, wo, wi, NORMAL).unwrap_or(0.0)
}

/// `(I, J)` on a fixed grid.
pub fn integrate_i_j(material: &Material, wo: Vec3, grid: &QuadratureGrid) -> (f64, f64) {
    grid.integrate_pair(|wi| dfg_up(material, wo, wi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergenceStatus {
    /// Last doubling changed `I` and `J` by less than 1%.
    Converged,
    /// Grid cap reached with a last change between 1% and 5%.
    Marginal,
    /// Grid cap reached with a last change above 5%.
    Failed,
}

impl ConvergenceStatus {
    pub fn ok(self) -> bool {
        self != ConvergenceStatus::Failed
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrals {
    pub i: f64,
    pub j: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    /// Largest relative change of `I` or `J` in the final doubling.
    pub delta: f64,
    pub status: ConvergenceStatus,
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Doubles both grid resolutions from 32×64 until `I` and `J` change by less
/// than 1%, stopping at 512×1024.
pub fn integrate_i_j_adaptive(material: &Material, wo: Vec3) -> Integrals {
    let (mut nt, mut np) = START_GRID;
    let (mut i, mut j) = integrate_i_j(material, wo, &QuadratureGrid::new(nt, np));
    loop {
        let (nt2, np2) = (nt * 2, np * 2);
        let (i2, j2) = integrate_i_j(material, wo, &QuadratureGrid::new(nt2, np2));
        let delta = rel_change(i, i2).max(rel_change(j, j2));
        (nt, np, i, j) = (nt2, np2, i2, j2);
        if delta < CONVERGED_DELTA || (nt, np) >= MAX_GRID {
            let status = if delta < CONVERGED_DELTA {
                ConvergenceStatus::Converged
            } else if delta <= FAILED_DELTA {
                ConvergenceStatus::Marginal
            } else {
                ConvergenceStatus::Failed
            };
            return Integrals {
                i,
                j,
                n_theta: nt,
                n_phi: np,
                delta,
                status,
            };
        }
    }
}

/// `(1 − m) c² L² / 3`; zero at `m = 1`.
pub fn sigma_d_bound_sq(metallic: f64, albedo: f64, radiance: f64) -> Result<f64, VarianceError> {
    if !(0.0..=1.0).contains(&metallic) {
        return Err(VarianceError::InvalidMetallic(metallic));
    }
    for (name, value) in [("albedo", albedo), ("radiance", radiance)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(VarianceError::NonPositive { name, value });
        }
    }
    Ok((1.0 - metallic) * albedo * albedo * radiance * radiance / 3.0)
}

/// `3 (2πJ − I²) / ((1 − m)(4 c cosθ_o)²)`.
pub fn ratio_from_integrals(i: f64, j: f64, metallic: f64, albedo: f64, cos_theta_o: f64) -> f64 {
    let spread = 2.0 * PI * j - i * i;
    3.0 * spread / ((1.0 - metallic) * (4.0 * albedo * cos_theta_o).powi(2))
}

/// `L² (2πJ − I²) / (16 cos²θ_o)`.
pub fn sigma_s_sq(i: f64, j: f64, radiance: f64, cos_theta_o: f64) -> f64 {
    radiance * radiance * (2.0 * PI * j - i * i) / (16.0 * cos_theta_o * cos_theta_o)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioReport {
    pub alpha: f64,
    pub metallic: f64,
    pub cos_theta_o: f64,
    pub f0: f64,
    pub albedo: f64,
    pub radiance: f64,
    pub integral_i: f64,
    pub integral_j: f64,
    pub sigma_s_sq: f64,
    pub sigma_d_bound_sq: f64,
    pub ratio_lower_bound: f64,
    pub integrals: Integrals,
}

impl RatioReport {
    pub fn converged(&self) -> bool {
        self.integrals.status.ok()
    }
}

fn check_ratio_inputs(material: &Material, cos_theta_o: f64) -> Result<(), VarianceError> {
    if material.metallic >= 1.0 {
        return Err(VarianceError::FullyMetallic);
    }
    if !(0.0..1.0).contains(&material.metallic) {
        return Err(VarianceError::InvalidMetallic(material.metallic));
    }
    if !(cos_theta_o > GRAZING_COS && cos_theta_o <= 1.0) {
        return Err(VarianceError::GrazingView(cos_theta_o));
    }
    if material.alpha() < ALPHA_FLOOR {
        return Err(VarianceError::AlphaBelowFloor(material.alpha()));
    }
    Ok(())
}

/// Ratio bound at view `cosθ_o` against `n = +z`; `c` is the albedo luminance.
pub fn ratio_lower_bound(material: &Material, cos_theta_o: f64, radiance: f64) -> Result<RatioReport, VarianceError> {
    check_ratio_inputs(material, cos_theta_o)?;
    let albedo = material.albedo.luminance();
    let sd = sigma_d_bound_sq(material.metallic, albedo, radiance)?;
    let integrals = integrate_i_j_adaptive(material, view_direction(cos_theta_o));
    let (i, j) = (integrals.i, integrals.j);
    Ok(RatioReport {
        alpha: material.alpha(),
        metallic: material.metallic,
        cos_theta_o,
        f0: analysis_f0(material),
        albedo,
        radiance,
        integral_i: i,
        integral_j: j,
        sigma_s_sq: sigma_s_sq(i, j, radiance, cos_theta_o),
        sigma_d_bound_sq: sd,
        ratio_lower_bound: ratio_from_integrals(i, j, material.metallic, albedo, cos_theta_o),
        integrals,
    })
}

/// Full-grid sweep in `alpha`-major, then `metallic`, then view order.
pub fn ratio_sweep(
    alphas: &[f64],
    metallics: &[f64],
    cos_thetas: &[f64],
    f0: f64,
    albedo: f64,
    radiance: f64,
) -> Result<Vec<RatioReport>, VarianceError> {
    let mut materials = Vec::new();
    for &a in alphas {
        for &m in metallics {
            for &c in cos_thetas {
                let mat = Material {
                    albedo: Vec3::splat(albedo),
                    roughness: a,
                    metallic: m,
                    f0: Vec3::splat(f0),
                    geometry_k_mode: Default::default(),
                };
                check_ratio_inputs(&mat, c)?;
                materials.push((mat, c));
            }
        }
    }
    materials.par_iter().map(|(m, c)| ratio_lower_bound(m, *c, radiance)).collect()
}

pub const SWEEP_HEADER: &str = "alpha,metallic,cos_theta_o,I,J,sigma_d_bound_sq,ratio_bound,converged";

pub fn write_sweep_csv(path: &Path, rows: &[RatioReport]) -> Result<(), VarianceError> {
    let io = |e: std::io::Error| VarianceError::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{SWEEP_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.alpha,
            r.metallic,
            r.cos_theta_o,
            r.integral_i,
            r.integral_j,
            r.sigma_d_bound_sq,
            r.ratio_lower_bound,
            r.converged()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Uniform-hemisphere Monte Carlo estimates of `I` and `J` with their standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McIntegrals {
    pub i: f64,
    pub j: f64,
    pub se_i: f64,
    pub se_j: f64,
}

pub fn mc_integrate_i_j(material: &Material, cos_theta_o: f64, samples: u64, seed: u64) -> McIntegrals {
    const CHUNK: u64 = 1 << 16;
    let wo = view_direction(cos_theta_o);
    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = CounterRng::new(seed, &[c]);
            let mut acc = [0.0; 4];
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let (wi, pdf) = sample_hemisphere_uniform(&mut rng, NORMAL);
                let f = if wi.z > 0.0 { dfg_up(material, wo, wi) } else { 0.0 };
                let (v, v2) = (f / pdf, f * f / pdf);
                acc[0] += v;
                acc[1] += v * v;
                acc[2] += v2;
                acc[3] += v2 * v2;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for s in &sums {
        for k in 0..4 {
            tot[k] += s[k];
        }
    }
    let n = samples as f64;
    let mean_se = |s: f64, s2: f64| {
        let m = s / n;
        (m, ((s2 / n - m * m).max(0.0) / n).sqrt())
    };
    let (i, se_i) = mean_se(tot[0], tot[1]);
    let (j, se_j) = mean_se(tot[2], tot[3]);
    McIntegrals { i, j, se_i, se_j }
}

/// Sample variance of the specular estimand `DFG · L / (4 cosθ_o · p)` under uniform sampling.
pub fn mc_specular_variance(material: &Material, cos_theta_o: f64, radiance: f64, samples: u64, seed: u64) -> f64 {
    let wo = view_direction(cos_theta_o);
    let mut rng = CounterRng::new(seed, &[]);
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let (wi, pdf) = sample_hemisphere_uniform(&mut rng, NORMAL);
        let x = if wi.z > 0.0 {
            dfg_up(material, wo, wi) * radiance / (4.0 * cos_theta_o * pdf)
        } else {
            0.0
        };
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    m2 / (n - 1.0)
}

/// Per-pixel comparison of measured specular and diffuse variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelComparison {
    pub x: usize,
    pub y: usize,
    pub object: usize,
    pub var_d: f64,
    pub var_s: f64,
}

impl PixelComparison {
    pub fn ratio(&self) -> f64 {
        if self.var_d > 0.0 {
            self.var_s / self.var_d
        } else if self.var_s > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    }

    pub fn specular_dominant(&self) -> bool {
        self.var_s > self.var_d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrosscheckReport {
    pub spp: u32,
    pub seed: u64,
    pub pixels: Vec<PixelComparison>,
    /// Fraction of selected pixels with `σ_s² > σ_d²` (luminance).
    pub fraction_specular_dominant: f64,
    /// Median of `σ_s²/σ_d²`; pixels with zero diffuse variance count as `+∞`.
    pub median_ratio: f64,
    /// Whether any selected object is glossy (`r ≤ 0.3` or `m ≥ 0.5`).
    pub any_glossy: bool,
    /// Smallest head-on analytic ratio bound over selected objects with `m < 1`.
    pub analytic_bound: Option<f64>,
}

impl CrosscheckReport {
    /// Measured dominance agrees in direction with an analytic bound above 1.
    pub fn direction_agrees(&self) -> Option<bool> {
        self.analytic_bound.map(|b| (b > 1.0) == (self.fraction_specular_dominant > 0.5))
    }
}

/// Renders `scene` and compares luminance variances on pixels whose camera ray
/// first hits an object accepted by `select(object_index, material)`.
pub fn crosscheck_renderer(
    scene: &Scene,
    spp: u32,
    seed: u64,
    select: impl Fn(usize, &Material) -> bool,
) -> Result<CrosscheckReport, VarianceError> {
    let chosen: Vec<bool> = (0..scene.objects.len()).map(|o| select(o, scene.material_of(o))).collect();
    if !chosen.iter().any(|&c| c) {
        return Err(VarianceError::NoQualifyingObject);
    }
    let r = render(scene, &RenderOptions::new(spp, seed))?;
    let mut pixels = Vec::new();
    for y in 0..r.height {
        for x in 0..r.width {
            let k = r.index(x, y);
            let Some(obj) = r.first_hit[k] else { continue };
            if !chosen[obj] {
                continue;
            }
            let (var_d, var_s) = r.stats[k].luminance_variances().unwrap_or((0.0, 0.0));
            pixels.push(PixelComparison {
                x,
                y,
                object: obj,
                var_d,
                var_s,
            });
        }
    }
    if pixels.is_empty() {
        return Err(VarianceError::NoQualifyingObject);
    }
    let dominant = pixels.iter().filter(|p| p.specular_dominant()).count();
    let mut ratios: Vec<f64> = pixels.iter().map(PixelComparison::ratio).filter(|r| !r.is_nan()).collect();
    ratios.sort_by(f64::total_cmp);
    let median_ratio = if ratios.is_empty() {
        f64::NAN
    } else if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    let selected: Vec<&Material> = (0..scene.objects.len()).filter(|&o| chosen[o]).map(|o| scene.material_of(o)).collect();
    let analytic_bound = selected
        .iter()
        .filter(|m| m.metallic < 1.0 && m.alpha() >= ALPHA_FLOOR && analysis_f0(m) > 0.0)
        .filter_map(|m| ratio_lower_bound(m, 1.0, 1.0).ok())
        .map(|r| r.ratio_lower_bound)
        .reduce(f64::min);
    Ok(CrosscheckReport {
        spp,
        seed,
        fraction_specular_dominant: dominant as f64 / pixels.len() as f64,
        median_ratio,
        any_glossy: selected.iter().any(|m| m.is_glossy()),
        analytic_bound,
        pixels,
    })
}

pub fn write_crosscheck_csv(path: &Path, report: &CrosscheckReport) -> Result<(), VarianceError> {
    let io = |e: std::io::Error| VarianceError::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "x,y,object,var_d,var_s,ratio,specular_dominant").map_err(io)?;
    for p in &report.pixels {
        writeln!(w, "{},{},{},{},{},{},{}", p.x, p.y, p.object, p.var_d, p.var_s, p.ratio(), p.specular_dominant())
            .map_err(io)?;
    }
    writeln!(
        w,
        "summary,{},,,,{},{}",
        report.pixels.len(),
        report.median_ratio,
        report.fraction_specular_dominant
    )
    .map_err(io)?;
    w.flush().map_err(io)
}
