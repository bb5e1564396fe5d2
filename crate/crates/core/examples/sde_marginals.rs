//! Reverse-SDE ensemble started from the forward marginal; prints the ensemble
//! variance next to the CLT variance `σ²τ^p` at a few checkpoints.
//!
//! ```text
//! cargo run --release --example sde_marginals -- [trajectories] [p]
//! ```

use mcsde::sde::{marginal_summary, simulate_ensemble, GridSpacing, InitMode, SdeParams, TauGrid};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(10_000), |s| s.parse())?;
    let p: f64 = args.next().map_or(Ok(2.0), |s| s.parse())?;
    let params = SdeParams::new(0.5, 0.8, p)?;
    let grid = TauGrid::new(1.0, 0.01, 1000, GridSpacing::Geometric)?;
    let ens = simulate_ensemble(&params, &grid, n, InitMode::ForwardMarginal, 0);
    println!("{:>10} {:>10} {:>12} {:>12} {:>8}", "tau", "mean", "var", "sigma2 tau^p", "ratio");
    for r in marginal_summary(&params, &ens, &grid.checkpoint_indices(5)) {
        println!("{:>10.4} {:>10.5} {:>12.5e} {:>12.5e} {:>8.4}", r.tau, r.mean, r.var, r.expected_var, r.var / r.expected_var);
    }
    Ok(())
}
