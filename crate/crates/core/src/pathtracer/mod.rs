//! Monte Carlo path tracer that keeps the diffuse and specular first-bounce
//! contributions apart so their joint per-pixel statistics can be measured.

mod brdf;
pub mod io;
mod material;
mod render;
mod sampling;
mod scene;
mod stats;
mod trace;
mod vec3;

use thiserror::Error;

pub use brdf::{brdf_eval, ggx_d, schlick_fresnel, smith_g, BrdfValue, GRAZING_EPSILON};
pub use material::{GeometryKMode, Material};
pub use render::{clt_scaling, least_squares_slope, render, replicate_variance, CltScaling, Render, RenderOptions};
pub use sampling::{hemisphere_direction, sample_hemisphere_uniform, UNIFORM_HEMISPHERE_PDF};
pub use scene::{Camera, Environment, Hit, Object, Ray, Scene, Shape};
pub use stats::PixelStats;
pub use trace::{trace_path, PathSample};
pub use vec3::{Rgb, Vec3};

#[derive(Debug, Error)]
pub enum PathTracerError {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("samples per pixel must be at least 1")]
    InvalidSpp,
    #[error("max_depth must be at least 1")]
    InvalidDepth,
    #[error("direction below the hemisphere (n·wo = {cos_o}, n·wi = {cos_i})")]
    BelowHemisphere { cos_o: f64, cos_i: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("scene is missing the `{0}` section")]
    MissingSection(&'static str),
    #[error("object references unknown material `{0}`")]
    UnknownMaterial(String),
    #[error(transparent)]
    Invalid(PathTracerError),
    #[error("cannot read scene {0}: {1}")]
    Io(String, #[source] std::io::Error),
}
