//! Renders a scene file and writes the image plus per-pixel diffuse/specular statistics.
//!
//! ```text
//! cargo run --release --example render_scene -- [scene.toml] [spp] [out.png]
//! ```

use std::path::{Path, PathBuf};

use mcsde::pathtracer::io::{write_image, write_stats_csv};
use mcsde::pathtracer::{render, RenderOptions, Scene};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let scene_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenes/mirror_sphere.toml"));
    let spp: u32 = args.next().map_or(Ok(64), |s| s.parse())?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "render.png".into()));

    let scene = Scene::load(&scene_path)?;
    let r = render(&scene, &RenderOptions::new(spp, 0))?;
    write_image(&out, r.width, r.height, &r.image)?;
    let stats = out.with_extension("stats.csv");
    write_stats_csv(&stats, &r)?;

    let (mut var_d, mut var_s, mut n) = (0.0, 0.0, 0usize);
    for s in &r.stats {
        if let Some((d, sp)) = s.luminance_variances() {
            var_d += d;
            var_s += sp;
            n += 1;
        }
    }
    println!("{}x{} at {spp} spp -> {} and {}", r.width, r.height, out.display(), stats.display());
    println!("mean per-sample luminance variance: diffuse {:.4e}, specular {:.4e}", var_d / n as f64, var_s / n as f64);
    Ok(())
}
