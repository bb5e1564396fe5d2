//! Estimator variance against samples per pixel on the glossy scene.
//!
//! ```text
//! cargo run --release --example clt_scaling -- [replicates] [seed]
//! ```

use std::path::Path;

use mcsde::pathtracer::{clt_scaling, Scene};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let replicates: usize = args.next().map_or(Ok(16), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let scene = Scene::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenes/glossy.toml"))?;

    let study = clt_scaling(&scene, &[16, 64, 256, 1024, 4096], replicates, seed, 2)?;
    println!("{:>6}  {:>14}  {:>14}", "spp", "variance", "spp*variance");
    for (n, v) in &study.points {
        println!("{n:>6}  {v:>14.6e}  {:>14.6e}", *n as f64 * v);
    }
    println!("log-log slope {:.4}", study.slope);
    Ok(())
}
