//! Measures how often specular variance exceeds diffuse variance on the
//! mirror-like sphere of `scenes/mirror_sphere.toml`.
//!
//! ```text
//! cargo run --release --example specular_dominance -- [spp] [seed]
//! ```

use std::path::Path;

use mcsde::pathtracer::Scene;
use mcsde::variance::crosscheck_renderer;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let spp: u32 = args.next().map_or(Ok(256), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let scene = Scene::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenes/mirror_sphere.toml"))?;

    let report = crosscheck_renderer(&scene, spp, seed, |_, m| m.metallic >= 0.5)?;
    println!("sphere pixels         {}", report.pixels.len());
    println!("specular dominant     {:.1}%", 100.0 * report.fraction_specular_dominant);
    println!("median var_s / var_d  {:.3}", report.median_ratio);
    if let Some(b) = report.analytic_bound {
        println!("analytic ratio bound  {b:.3} (head-on view)");
    }
    Ok(())
}
