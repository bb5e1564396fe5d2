//! `|drift|` stays bounded as `τ → 0` when `Y` follows the CLT marginal.
//!
//! ```text
//! cargo run --release --example drift_bound -- [ensemble]
//! ```

use mcsde::sde::{drift_boundedness_stat, drift_q99_bound, SdeParams};

fn main() -> anyhow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(Ok(100_000), |s| s.parse())?;
    let params = SdeParams::standard(1.0, 1.0)?;
    let taus = [1.0, 0.1, 0.01, 1e-3, 1e-4];
    println!("q99 ceiling {:.3}", drift_q99_bound(&params, 0.05));
    println!("{:>8} {:>9} {:>9} {:>9} {:>9}", "tau", "mean", "q50", "q90", "q99");
    for q in drift_boundedness_stat(&params, &taus, n, 0)? {
        println!("{:>8.0e} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", q.tau, q.mean_abs, q.q50, q.q90, q.q99);
    }
    Ok(())
}
