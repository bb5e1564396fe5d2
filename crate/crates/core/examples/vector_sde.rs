//! Correlated diffuse/specular SDE: the total `Y_d + Y_s` has variance
//! `(Σ_dd + Σ_ss + 2Σ_ds) τ^p`.
//!
//! ```text
//! cargo run --release --example vector_sde -- [trajectories]
//! ```

use mcsde::sde::{simulate_vector_ensemble, CovMatrix2, GridSpacing, TauGrid};

fn main() -> anyhow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(Ok(10_000), |s| s.parse())?;
    let cov = CovMatrix2::new(0.2, 4.0, 0.6);
    let grid = TauGrid::new(1.0, 0.05, 500, GridSpacing::Geometric)?;
    let ens = simulate_vector_ensemble([0.3, 0.7], &cov, 2.0, &grid, n, 0)?;
    for k in grid.checkpoint_indices(4) {
        let tau = grid.taus()[k];
        let totals: Vec<f64> = ens.iter().map(|t| t.values[k][0] + t.values[k][1]).collect();
        let mean = totals.iter().sum::<f64>() / n as f64;
        let var = totals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let want = cov.total_variance() * tau * tau;
        println!("tau = {tau:.4}  var(total) = {var:.5e}  expected = {want:.5e}  mean = {mean:.4}");
    }
    Ok(())
}
