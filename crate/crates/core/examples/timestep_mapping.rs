//! Maps sample counts to diffusion timesteps on both schedule families.
//!
//! ```text
//! cargo run --release --example timestep_mapping -- [N ...]
//! ```

use mcsde::schedule::{NoiseSchedule, TauMapper};

fn main() -> anyhow::Result<()> {
    let mut ns: Vec<f64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    if ns.is_empty() {
        ns = vec![1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0];
    }
    for (name, s) in [("linear", NoiseSchedule::default_linear()), ("cosine", NoiseSchedule::default_cosine())] {
        let m = TauMapper::new(s, 0.001, 5000.0)?;
        println!("{name}: anchor A = {:.4}, max table gap {:.4}", m.anchor_a, m.schedule.max_adjacent_gap());
        for &n in &ns {
            let r = m.map_samples(n)?;
            println!("  N = {n:>7}  tau = {:.5}  target = {:>8.4}  t* = {:>4}  residual = {:.2e}", r.tau, r.lambda_target, r.t_star, r.residual);
        }
    }
    Ok(())
}
