//! Noise-free reverse flow against the closed form `μ + (Y₀ − μ)(τ/τ₀)^p`.
//!
//! ```text
//! cargo run --release --example deterministic_flow -- [steps]
//! ```

use mcsde::rng::CounterRng;
use mcsde::sde::{simulate_reverse, GridSpacing, SdeParams, TauGrid};

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(10_000), |s| s.parse())?;
    let (mu, y0, tau0) = (0.5, 2.0, 1.0);
    let grid = TauGrid::new(tau0, 0.01, steps, GridSpacing::Geometric)?;
    for p in [1.5, 2.0, 3.0] {
        let params = SdeParams::new(mu, 0.0, p)?;
        let traj = simulate_reverse(&params, &grid, y0, &mut CounterRng::new(0, &[]));
        let worst = grid
            .taus()
            .iter()
            .zip(traj.scalar_values())
            .map(|(&tau, y)| (y - (mu + (y0 - mu) * (tau / tau0).powf(p))).abs())
            .fold(0.0, f64::max);
        println!("p = {p:<4} final Y = {:.6}  max |error| = {worst:.3e}", traj.last_value());
    }
    Ok(())
}
