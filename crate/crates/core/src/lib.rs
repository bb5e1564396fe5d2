//! Monte Carlo rendering viewed as a stochastic differential equation.
//!
//! The crate renders analytic scenes while tracking diffuse and specular
//! variance per pixel ([`pathtracer`]), simulates the Monte Carlo SDE and its
//! variance-exploding forward dual ([`sde`]), aligns sample counts with
//! discrete diffusion timesteps through log-SNR matching ([`schedule`]),
//! evaluates the specular/diffuse variance ratio analytically
//! ([`variance`]) and measures the gap between Monte Carlo and Gaussian noise
//! with two-sample metrics ([`metrics`]). [`cli`] wires these into the
//! `mcsde` binary.

pub mod cli;
pub mod metrics;
pub mod pathtracer;
pub mod rng;
pub mod schedule;
pub mod sde;
pub mod variance;
