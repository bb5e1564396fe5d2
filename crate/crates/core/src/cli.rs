//! `mcsde` command-line interface.
//!
//! Every subcommand takes flags, optionally backed by a TOML file passed with
//! `--config`. The file holds one table per subcommand (`[render]`,
//! `[sde-sim]`, `[map]`, `[ratio]`, `[compare-noise]`) whose keys are the long
//! flag names; flags given on the command line win. Each run ends by writing a
//! JSON manifest next to its primary output.
//!
//! Exit codes: 0 success, 2 invalid input, 3 I/O failure, 4 numerical
//! non-convergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::metrics::{self, Bandwidths, GapConfig, MetricConfig, MetricError, NoiseMatch};
use crate::pathtracer::io::{self as pio, LinearImage};
use crate::pathtracer::{render, PathTracerError, RenderOptions, Rgb, Scene, SceneError};
use crate::schedule::{self, NoiseSchedule, ScheduleError, ScheduleKind, TauMapper};
use crate::sde::{self, GridSpacing, InitMode, SdeError, SdeParams, TauGrid};
use crate::variance::{self, VarianceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

pub const THREADS_ENV: &str = "MCSDE_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io(..) => Self::io(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<PathTracerError> for CliError {
    fn from(e: PathTracerError) -> Self {
        match e {
            PathTracerError::Io(_) => Self::io(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Io(_) => Self::io(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::Io(_) => Self::io(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<VarianceError> for CliError {
    fn from(e: VarianceError) -> Self {
        match e {
            VarianceError::Io(_) | VarianceError::Render(PathTracerError::Io(_)) => Self::io(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Io(_) => Self::io(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

/// Declares a flag set whose fields are all optional, so that the same struct
/// parses from the command line and from a config table, and flags overlay the file.
macro_rules! flag_set {
    ($(#[$m:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$m])*
        #[derive(Args, Deserialize, Debug, Clone, Default)]
        #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            fn overlay(self, base: Self) -> Self {
                Self { $( $field: self.$field.or(base.$field), )* }
            }
        }
    };
}

flag_set! {
    /// Render a scene and write the image plus per-pixel statistics.
    RenderArgs {
        /// Scene description (TOML).
        scene: PathBuf,
        /// Samples per pixel [default: 16].
        spp: u32,
        /// Random seed [default: 0].
        seed: u64,
        /// Bounces after the primary hit [default: 2].
        max_depth: u32,
        /// Image path; `.png` writes PNG, anything else binary PPM.
        out_image: PathBuf,
        /// Statistics CSV [default: image path with extension `stats.csv`].
        out_stats: PathBuf,
        /// Manifest path [default: image path with extension `manifest.json`].
        manifest: PathBuf,
    }
}

flag_set! {
    /// Simulate reverse MC-SDE trajectories.
    SdeSimArgs {
        /// Estimand mean [default: 1].
        mu: f64,
        /// Per-sample standard deviation [default: 1].
        sigma: f64,
        /// Variance exponent, τ^p [default: 2].
        p: f64,
        /// Initial (largest) τ [default: 1].
        tau_start: f64,
        /// Final τ, floored at 1e-4 [default: 0.01].
        tau_end: f64,
        /// Euler–Maruyama steps [default: 1000].
        steps: usize,
        /// Ensemble size [default: 1000].
        trajectories: usize,
        /// Random seed [default: 0].
        seed: u64,
        /// `geometric` or `linear` τ spacing [default: geometric].
        spacing: String,
        /// Fixed start value; without it each trajectory starts from the forward marginal.
        y0: f64,
        /// Marginal checkpoints, ends included [default: 5].
        checkpoints: usize,
        /// Trajectories written in full to `--out` [default: min(100, trajectories)].
        write_trajectories: usize,
        /// Trajectory CSV.
        out: PathBuf,
        /// Marginal CSV [default: `--out` with extension `marginal.csv`].
        out_marginal: PathBuf,
        /// Manifest path [default: `--out` with extension `manifest.json`].
        manifest: PathBuf,
    }
}

flag_set! {
    /// Map a sample count to a diffusion timestep.
    MapArgs {
        /// Samples per pixel N.
        n: f64,
        /// `linear` or `cosine` [default: linear].
        schedule: String,
        /// Number of diffusion steps T [default: 1000].
        steps: usize,
        /// Linear schedule β_1 [default: 1e-4].
        beta_start: f64,
        /// Linear schedule β_T [default: 0.02].
        beta_end: f64,
        /// Cosine schedule offset s [default: 0.008].
        cosine_offset: f64,
        /// Anchor range lower end [default: 0.001].
        n_min: f64,
        /// Anchor range upper end [default: 5000].
        n_max: f64,
        /// CSV receiving one appended row.
        out: PathBuf,
        /// Manifest path [default: `--out` with extension `manifest.json`].
        manifest: PathBuf,
    }
}

flag_set! {
    /// Sweep the analytic specular/diffuse variance-ratio bound.
    RatioArgs {
        /// Comma-separated roughness values α.
        #[arg(value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Comma-separated metallic values in [0, 1).
        #[arg(value_delimiter = ',')]
        metallic: Vec<f64>,
        /// Comma-separated view cosines [default: 1].
        #[arg(value_delimiter = ',')]
        cos_theta_o: Vec<f64>,
        /// Base reflectance [default: 0.04].
        f0: f64,
        /// Diffuse albedo [default: 0.8].
        albedo: f64,
        /// Uniform incident radiance [default: 1].
        radiance: f64,
        /// Sweep CSV.
        out: PathBuf,
        /// Manifest path [default: `--out` with extension `manifest.json`].
        manifest: PathBuf,
    }
}

flag_set! {
    /// Compare low-sample residuals against variance-matched Gaussian noise.
    CompareNoiseArgs {
        /// Low-sample render: statistics CSV, PNG or PPM.
        low: PathBuf,
        /// Reference render: statistics CSV, PNG or PPM.
        reference: PathBuf,
        /// Samples per pixel of `--low` [default: read from a statistics CSV].
        spp: u64,
        /// `linear` or `cosine` [default: linear].
        schedule: String,
        /// Number of diffusion steps T [default: 1000].
        steps: usize,
        /// Anchor range lower end [default: 0.001].
        n_min: f64,
        /// Anchor range upper end [default: 5000].
        n_max: f64,
        /// Patch count [default: 512].
        patches: usize,
        /// Patch edge length [default: 4].
        patch_size: usize,
        /// Random seed [default: 0].
        seed: u64,
        /// `auto`, `per-pixel`, `per-channel` or `schedule` [default: auto].
        noise_match: String,
        /// Signal power for `schedule` matching [default: mean squared reference luminance].
        kappa: f64,
        /// Gaussian-vs-Gaussian pairs in each baseline [default: 8].
        baseline_pairs: usize,
        /// Match the residual's channel correlation (`true`/`false`) [default: true].
        correlate_channels: bool,
        /// MMD pooling factor [default: 1].
        pool_factor: usize,
        /// Spectral pooling factor [default: 1].
        fft_pool_factor: usize,
        /// Clip interval half-width in reference standard deviations [default: 3].
        range_k_sigma: f64,
        /// Comma-separated fixed MMD bandwidths [default: median heuristic].
        #[arg(value_delimiter = ',')]
        bandwidths: Vec<f64>,
        /// Gap report CSV.
        out: PathBuf,
        /// Manifest path [default: `--out` with extension `manifest.json`].
        manifest: PathBuf,
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    Render(RenderArgs),
    SdeSim(SdeSimArgs),
    Map(MapArgs),
    Ratio(RatioArgs),
    CompareNoise(CompareNoiseArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Render(_) => "render",
            Command::SdeSim(_) => "sde-sim",
            Command::Map(_) => "map",
            Command::Ratio(_) => "ratio",
            Command::CompareNoise(_) => "compare-noise",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mcsde", version, about = "Monte Carlo rendering as a stochastic differential equation")]
struct Cli {
    /// Worker threads; falls back to MCSDE_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    render: RenderArgs,
    sde_sim: SdeSimArgs,
    map: MapArgs,
    ratio: RatioArgs,
    compare_noise: CompareNoiseArgs,
}

fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one run, written after every other output.
#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest_inputs(paths: &[&Path]) -> Result<Vec<InputDigest>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    for out in &manifest.outputs {
        if !Path::new(out).is_file() {
            return Err(CliError::io(format!("expected output {out} is missing")));
        }
    }
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::input(format!("missing required --{flag}")))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn parse_spacing(s: &str) -> Result<GridSpacing, CliError> {
    match s {
        "geometric" => Ok(GridSpacing::Geometric),
        "linear" => Ok(GridSpacing::Linear),
        other => Err(CliError::input(format!("--spacing must be geometric or linear, got `{other}`"))),
    }
}

fn parse_schedule_kind(s: &str) -> Result<ScheduleKind, CliError> {
    s.parse().map_err(|e: String| CliError::input(format!("--schedule: {e}")))
}

fn cmd_render(a: RenderArgs) -> Result<(), CliError> {
    let scene_path = required(a.scene, "scene")?;
    let out_image = required(a.out_image, "out-image")?;
    let out_stats = a.out_stats.unwrap_or_else(|| sibling(&out_image, "stats.csv"));
    let manifest = a.manifest.unwrap_or_else(|| sibling(&out_image, "manifest.json"));
    let spp = a.spp.unwrap_or(16);
    let seed = a.seed.unwrap_or(0);
    let max_depth = a.max_depth.unwrap_or(2);

    let scene = Scene::load(&scene_path)?;
    let opts = RenderOptions::new(spp, seed).with_max_depth(max_depth);
    let r = render(&scene, &opts)?;
    pio::write_image(&out_image, r.width, r.height, &r.image)?;
    pio::write_stats_csv(&out_stats, &r)?;
    eprintln!("rendered {}x{} at {spp} spp", r.width, r.height);

    write_manifest(
        &manifest,
        &RunManifest {
            subcommand: "render".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: Some(seed),
            config: json!({
                "scene": path_str(&scene_path),
                "spp": spp,
                "seed": seed,
                "max_depth": max_depth,
                "out_image": path_str(&out_image),
                "out_stats": path_str(&out_stats),
            }),
            inputs: digest_inputs(&[&scene_path])?,
            outputs: vec![path_str(&out_image), path_str(&out_stats)],
        },
    )
}

fn cmd_sde_sim(a: SdeSimArgs) -> Result<(), CliError> {
    let out = required(a.out, "out")?;
    let out_marginal = a.out_marginal.unwrap_or_else(|| sibling(&out, "marginal.csv"));
    let manifest = a.manifest.unwrap_or_else(|| sibling(&out, "manifest.json"));
    let mu = a.mu.unwrap_or(1.0);
    let sigma = a.sigma.unwrap_or(1.0);
    let p = a.p.unwrap_or(2.0);
    let tau_start = a.tau_start.unwrap_or(1.0);
    let tau_end = a.tau_end.unwrap_or(0.01);
    let steps = a.steps.unwrap_or(1000);
    let n = a.trajectories.unwrap_or(1000);
    let seed = a.seed.unwrap_or(0);
    let spacing_name = a.spacing.unwrap_or_else(|| "geometric".into());
    let spacing = parse_spacing(&spacing_name)?;
    let checkpoints = a.checkpoints.unwrap_or(5);
    let n_write = a.write_trajectories.unwrap_or(n.min(100));

    if tau_end <= 0.0 || !tau_end.is_finite() {
        return Err(CliError::input(format!("--tau-end must be positive, got {tau_end}")));
    }
    if n < 2 {
        return Err(CliError::input(format!("--trajectories must be at least 2, got {n}")));
    }
    if n_write > n {
        return Err(CliError::input(format!("--write-trajectories {n_write} exceeds --trajectories {n}")));
    }
    if checkpoints < 2 {
        return Err(CliError::input("--checkpoints must be at least 2"));
    }
    let params = SdeParams::new(mu, sigma, p)?;
    let grid = TauGrid::new(tau_start, tau_end, steps, spacing)?;
    let init = a.y0.map_or(InitMode::ForwardMarginal, InitMode::Fixed);

    let ensemble = sde::simulate_ensemble(&params, &grid, n, init, seed);
    let all: Vec<usize> = (0..grid.len()).collect();
    sde::write_trajectories_csv(&out, &ensemble[..n_write], &all)?;
    let rows = sde::marginal_summary(&params, &ensemble, &grid.checkpoint_indices(checkpoints));
    sde::write_marginal_csv(&out_marginal, &rows)?;
    eprintln!("simulated {n} trajectories over {steps} steps");

    write_manifest(
        &manifest,
        &RunManifest {
            subcommand: "sde-sim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: Some(seed),
            config: json!({
                "mu": mu,
                "sigma": sigma,
                "p": p,
                "tau_start": tau_start,
                "tau_end": grid.taus()[grid.steps()],
                "steps": steps,
                "trajectories": n,
                "seed": seed,
                "spacing": spacing_name,
                "y0": a.y0,
                "checkpoints": checkpoints,
                "write_trajectories": n_write,
                "out": path_str(&out),
                "out_marginal": path_str(&out_marginal),
            }),
            inputs: vec![],
            outputs: vec![path_str(&out), path_str(&out_marginal)],
        },
    )
}

fn build_schedule(
    kind: ScheduleKind,
    steps: usize,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
    cosine_offset: Option<f64>,
) -> Result<NoiseSchedule, CliError> {
    Ok(match kind {
        ScheduleKind::Linear => {
            if cosine_offset.is_some() {
                return Err(CliError::input("--cosine-offset applies only to the cosine schedule"));
            }
            NoiseSchedule::linear(steps, beta_start.unwrap_or(1e-4), beta_end.unwrap_or(0.02))?
        }
        ScheduleKind::Cosine => {
            if beta_start.is_some() || beta_end.is_some() {
                return Err(CliError::input("--beta-start/--beta-end apply only to the linear schedule"));
            }
            NoiseSchedule::cosine(steps, cosine_offset.unwrap_or(0.008))?
        }
    })
}

fn cmd_map(a: MapArgs) -> Result<(), CliError> {
    let n = required(a.n, "n")?;
    let out = required(a.out, "out")?;
    let manifest = a.manifest.unwrap_or_else(|| sibling(&out, "manifest.json"));
    let kind_name = a.schedule.unwrap_or_else(|| "linear".into());
    let kind = parse_schedule_kind(&kind_name)?;
    let steps = a.steps.unwrap_or(1000);
    let n_min = a.n_min.unwrap_or(0.001);
    let n_max = a.n_max.unwrap_or(5000.0);
    let s = build_schedule(kind, steps, a.beta_start, a.beta_end, a.cosine_offset)?;
    let mapper = TauMapper::new(s, n_min, n_max)?;
    let r = mapper.map_samples(n)?;
    schedule::append_map_csv(&out, n, &r)?;
    println!("t = {} residual = {}", r.t_star, r.residual);

    write_manifest(
        &manifest,
        &RunManifest {
            subcommand: "map".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: json!({
                "n": n,
                "schedule": kind.to_string(),
                "steps": steps,
                "beta_start": a.beta_start,
                "beta_end": a.beta_end,
                "cosine_offset": a.cosine_offset,
                "n_min": n_min,
                "n_max": n_max,
                "anchor": mapper.anchor_a,
                "out": path_str(&out),
            }),
            inputs: vec![],
            outputs: vec![path_str(&out)],
        },
    )
}

fn cmd_ratio(a: RatioArgs) -> Result<(), CliError> {
    let out = required(a.out, "out")?;
    let manifest = a.manifest.unwrap_or_else(|| sibling(&out, "manifest.json"));
    let alphas = required(a.alpha, "alpha")?;
    let metallics = required(a.metallic, "metallic")?;
    let cos = a.cos_theta_o.unwrap_or_else(|| vec![1.0]);
    let f0 = a.f0.unwrap_or(0.04);
    let albedo = a.albedo.unwrap_or(0.8);
    let radiance = a.radiance.unwrap_or(1.0);
    if alphas.is_empty() || metallics.is_empty() || cos.is_empty() {
        return Err(CliError::input("--alpha, --metallic and --cos-theta-o need at least one value"));
    }
    if let Some(&m) = metallics.iter().find(|&&m| !(0.0..1.0).contains(&m)) {
        return Err(CliError::input(format!("--metallic value {m} is outside [0, 1)")));
    }
    if let Some(&al) = alphas.iter().find(|&&al| !(al >= variance::ALPHA_FLOOR && al.is_finite())) {
        return Err(CliError::input(format!("--alpha value {al} is below the floor {}", variance::ALPHA_FLOOR)));
    }
    if let Some(&c) = cos.iter().find(|&&c| !(c > variance::GRAZING_COS && c <= 1.0)) {
        return Err(CliError::input(format!("--cos-theta-o value {c} is outside ({}, 1]", variance::GRAZING_COS)));
    }
    let rows = variance::ratio_sweep(&alphas, &metallics, &cos, f0, albedo, radiance)?;
    variance::write_sweep_csv(&out, &rows)?;
    let failed = rows.iter().filter(|r| !r.converged()).count();
    eprintln!("{} sweep rows, {failed} not converged", rows.len());

    write_manifest(
        &manifest,
        &RunManifest {
            subcommand: "ratio".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: json!({
                "alpha": alphas,
                "metallic": metallics,
                "cos_theta_o": cos,
                "f0": f0,
                "albedo": albedo,
                "radiance": radiance,
                "out": path_str(&out),
            }),
            inputs: vec![],
            outputs: vec![path_str(&out)],
        },
    )?;
    if failed > 0 {
        return Err(CliError {
            code: EXIT_NONCONVERGENCE,
            message: format!("{failed} quadrature rows failed to converge"),
        });
    }
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Image plus, for statistics CSVs, sample count and per-sample variance.
fn load_render(path: &Path) -> Result<(LinearImage, Option<(u64, Vec<Rgb>)>), CliError> {
    if is_csv(path) {
        let (width, height, rows) = pio::read_stats_csv(path)?;
        let n = rows.first().map_or(0, |r| r.n);
        if rows.iter().any(|r| r.n != n) {
            return Err(CliError::input(format!("{}: sample count varies across pixels", path.display())));
        }
        let img = LinearImage {
            width,
            height,
            pixels: rows.iter().map(|r| r.mean_d + r.mean_s).collect(),
        };
        Ok((img, Some((n, pio::sample_variance(&rows)))))
    } else {
        Ok((pio::load_linear_image(path)?, None))
    }
}

fn cmd_compare_noise(a: CompareNoiseArgs) -> Result<(), CliError> {
    let low_path = required(a.low, "low")?;
    let ref_path = required(a.reference, "reference")?;
    let out = required(a.out, "out")?;
    let manifest = a.manifest.unwrap_or_else(|| sibling(&out, "manifest.json"));
    let kind_name = a.schedule.unwrap_or_else(|| "linear".into());
    let kind = parse_schedule_kind(&kind_name)?;
    let steps = a.steps.unwrap_or(1000);
    let n_min = a.n_min.unwrap_or(0.001);
    let n_max = a.n_max.unwrap_or(5000.0);
    let seed = a.seed.unwrap_or(0);
    let match_name = a.noise_match.unwrap_or_else(|| "auto".into());

    let (low, low_stats) = load_render(&low_path)?;
    let (reference, ref_stats) = load_render(&ref_path)?;
    if (low.width, low.height) != (reference.width, reference.height) {
        return Err(CliError::input(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            low.width, low.height, reference.width, reference.height
        )));
    }
    let spp = match (a.spp, &low_stats) {
        (Some(s), _) => s,
        (None, Some((n, _))) => *n,
        (None, None) => return Err(CliError::input("--spp is required when --low is an image")),
    };
    if spp == 0 {
        return Err(CliError::input("--spp must be at least 1"));
    }
    let kappa = a.kappa.unwrap_or_else(|| {
        reference.pixels.iter().map(|p| p.luminance().powi(2)).sum::<f64>() / reference.pixels.len().max(1) as f64
    });
    let noise = match match_name.as_str() {
        "auto" if ref_stats.is_some() => NoiseMatch::PerPixel,
        "auto" | "per-channel" => NoiseMatch::PerChannel,
        "per-pixel" if ref_stats.is_some() => NoiseMatch::PerPixel,
        "per-pixel" => return Err(CliError::input("--noise-match per-pixel needs a statistics CSV for --reference")),
        "schedule" => NoiseMatch::Schedule { kappa },
        other => {
            return Err(CliError::input(format!(
                "--noise-match must be auto, per-pixel, per-channel or schedule, got `{other}`"
            )))
        }
    };
    let bandwidths = match a.bandwidths {
        Some(b) => Bandwidths::Fixed(b),
        None => Bandwidths::default(),
    };
    let config = GapConfig {
        n_patches: a.patches.unwrap_or(512),
        patch_size: a.patch_size.unwrap_or(4),
        seed,
        noise,
        baseline_pairs: a.baseline_pairs.unwrap_or(8),
        correlate_channels: a.correlate_channels.unwrap_or(true),
        metrics: MetricConfig {
            mmd_bandwidths: bandwidths,
            pool_factor: a.pool_factor.unwrap_or(1),
            fft_pool_factor: a.fft_pool_factor.unwrap_or(1),
            range_k_sigma: a.range_k_sigma.unwrap_or(3.0),
        },
    };

    let mapper = TauMapper::new(NoiseSchedule::build(kind, steps)?, n_min, n_max)?;
    let mapped = mapper.map_samples(spp as f64)?;
    let variances = ref_stats.as_ref().map(|(n_ref, v)| metrics::residual_variance(v, spp, *n_ref));
    let report = metrics::mc_vs_gaussian_gap(&low, variances.as_deref(), &reference, spp, &mapper.schedule, mapped.t_star, &config)?;
    metrics::write_gap_csv(&out, &config, std::slice::from_ref(&report))?;
    eprintln!(
        "mmd = {} baseline = {} ratio = {:.3}",
        report.mmd,
        report.mmd_baseline,
        report.mmd_ratio()
    );

    let bw_json = match &config.metrics.mmd_bandwidths {
        Bandwidths::Fixed(b) => json!(b),
        Bandwidths::Median(_) => json!("median"),
    };
    write_manifest(
        &manifest,
        &RunManifest {
            subcommand: "compare-noise".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: Some(seed),
            config: json!({
                "low": path_str(&low_path),
                "reference": path_str(&ref_path),
                "spp": spp,
                "schedule": kind.to_string(),
                "steps": steps,
                "n_min": n_min,
                "n_max": n_max,
                "mapped_t": mapped.t_star,
                "patches": config.n_patches,
                "patch_size": config.patch_size,
                "seed": seed,
                "noise_match": noise.name(),
                "kappa": match noise { NoiseMatch::Schedule { kappa } => Some(kappa), _ => None },
                "baseline_pairs": config.baseline_pairs,
                "correlate_channels": config.correlate_channels,
                "pool_factor": config.metrics.pool_factor,
                "fft_pool_factor": config.metrics.fft_pool_factor,
                "range_k_sigma": config.metrics.range_k_sigma,
                "bandwidths": bw_json,
                "out": path_str(&out),
            }),
            inputs: digest_inputs(&[&low_path, &ref_path])?,
            outputs: vec![path_str(&out)],
        },
    )
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::input(format!("{THREADS_ENV} must be a nonnegative integer, got `{v}`"))),
        _ => Ok(0),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => load_config(p)?,
        None => ConfigFile::default(),
    };
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::input(format!("cannot start {threads} threads: {e}")))?;
    let name = cli.command.name();
    log_line(name, "start");
    let result = pool.install(|| match cli.command {
        Command::Render(a) => cmd_render(a.overlay(config.render)),
        Command::SdeSim(a) => cmd_sde_sim(a.overlay(config.sde_sim)),
        Command::Map(a) => cmd_map(a.overlay(config.map)),
        Command::Ratio(a) => cmd_ratio(a.overlay(config.ratio)),
        Command::CompareNoise(a) => cmd_compare_noise(a.overlay(config.compare_noise)),
    });
    if result.is_ok() {
        log_line(name, "done");
    }
    result
}

fn log_line(cmd: &str, what: &str) {
    eprintln!("mcsde {cmd}: {what}");
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let file: ConfigFile = toml::from_str("[render]\nspp = 8\nseed = 3\n").unwrap();
        let cli = RenderArgs {
            spp: Some(32),
            ..Default::default()
        };
        let merged = cli.overlay(file.render);
        assert_eq!(merged.spp, Some(32));
        assert_eq!(merged.seed, Some(3));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(toml::from_str::<ConfigFile>("[render]\nsamples = 8\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[bogus]\n").is_err());
        let c: ConfigFile = toml::from_str("[ratio]\nalpha = [0.1, 0.2]\n[compare-noise]\npatch-size = 4\n").unwrap();
        assert_eq!(c.ratio.alpha, Some(vec![0.1, 0.2]));
        assert_eq!(c.compare_noise.patch_size, Some(4));
    }

    #[test]
    fn list_flags_split_on_commas() {
        let cli = Cli::try_parse_from(["mcsde", "ratio", "--alpha", "0.4,0.2", "--metallic", "0", "--out", "x.csv"]).unwrap();
        match cli.command {
            Command::Ratio(a) => assert_eq!(a.alpha, Some(vec![0.4, 0.2])),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["mcsde", "bogus"]), EXIT_INPUT);
        assert_eq!(run(["mcsde", "render", "--spp", "x"]), EXIT_INPUT);
        assert_eq!(run(["mcsde", "render"]), EXIT_INPUT);
        assert_eq!(run(["mcsde", "--help"]), EXIT_OK);
    }

    #[test]
    fn ratio_rejects_full_metal() {
        let e = cmd_ratio(RatioArgs {
            alpha: Some(vec![0.1]),
            metallic: Some(vec![0.5, 1.0]),
            out: Some("unused.csv".into()),
            ..Default::default()
        })
        .unwrap_err();
        assert_eq!(e.code, EXIT_INPUT);
        assert!(e.message.contains("value 1 "), "{}", e.message);
    }
}
