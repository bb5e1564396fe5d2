//! Sample-count and timestep scales at which diffuse and specular content
//! become resolvable.
//!
//! ```text
//! cargo run --release --example stabilization_order -- [p_spec]
//! ```

use mcsde::schedule::{min_samples_for_accuracy, recovery_onset, reverse_steps_until_recoverable, BandwidthModel, NoiseSchedule};

fn main() -> anyhow::Result<()> {
    let p_spec: f64 = std::env::args().nth(1).map_or(Ok(2.0), |s| s.parse())?;
    let (mu, eps, sigma_d) = (0.5, 0.1, 0.2);
    let diff = min_samples_for_accuracy(mu, sigma_d, eps)?;
    for r in [2.0, 10.0, 100.0] {
        let spec = min_samples_for_accuracy(mu, sigma_d * r, eps)?;
        println!("sigma_s/sigma_d = {r:>5}: N*_s = {:.4e}, N*_d = {:.4e}, ratio {:.1}", spec.n_star, diff.n_star, spec.n_star / diff.n_star);
    }
    let model = BandwidthModel::new(p_spec, 1.0)?;
    for (name, s) in [("linear", NoiseSchedule::default_linear()), ("cosine", NoiseSchedule::default_cosine())] {
        println!("{name} schedule, p_spec = {p_spec}");
        for f in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let onset = recovery_onset(&s, &model, f)?;
            match reverse_steps_until_recoverable(&s, &model, f)? {
                Some(k) => println!("  f = {f:>6}: recoverable from t = {onset}, after {k} reverse steps"),
                None => println!("  f = {f:>6}: never recoverable"),
            }
        }
    }
    Ok(())
}
