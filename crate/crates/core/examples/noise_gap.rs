//! Distance between low-sample Monte Carlo residuals and variance-matched
//! Gaussian noise across a sample-count ladder.
//!
//! ```text
//! cargo run --release --example noise_gap -- [size] [reference_spp] [seed] [noise_match] [patches] [patch_size]
//! ```

use std::path::Path;

use mcsde::metrics::{mc_vs_gaussian_gap, residual_variance, GapConfig, NoiseMatch};
use mcsde::pathtracer::io::LinearImage;
use mcsde::pathtracer::{render, RenderOptions, Scene};
use mcsde::schedule::{NoiseSchedule, TauMapper};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map_or(Ok(64), |s| s.parse())?;
    let ref_spp: u32 = args.next().map_or(Ok(4096), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let mut scene = Scene::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenes/glossy.toml"))?;
    scene.camera.width = size;
    scene.camera.height = size;

    let ref_render = render(&scene, &RenderOptions::new(ref_spp, seed.wrapping_add(1)))?;
    let sample_var: Vec<_> = ref_render.stats.iter().map(|s| s.variance_total().unwrap_or_default()).collect();
    let reference = LinearImage::from_render(&ref_render);
    let mapper = TauMapper::new(NoiseSchedule::default_linear(), 0.001, 5000.0)?;
    let mode = args.next().unwrap_or_else(|| "per-pixel".into());
    let kappa = reference.pixels.iter().map(|p| p.luminance().powi(2)).sum::<f64>() / reference.pixels.len() as f64;
    let noise = match mode.as_str() {
        "schedule" => NoiseMatch::Schedule { kappa },
        "per-channel" => NoiseMatch::PerChannel,
        _ => NoiseMatch::PerPixel,
    };
    let n_patches: usize = args.next().map_or(Ok(512), |s| s.parse())?;
    let patch_size: usize = args.next().map_or(Ok(4), |s| s.parse())?;
    let config = GapConfig {
        seed,
        noise,
        n_patches,
        patch_size,
        ..GapConfig::default()
    };
    println!("{:>5} {:>7} {:>12} {:>12} {:>8} {:>10}", "spp", "t", "mmd", "baseline", "ratio", "moment");
    for spp in [4u32, 16, 64, 256] {
        let low = render(&scene, &RenderOptions::new(spp, seed))?;
        let var = residual_variance(&sample_var, spp as u64, ref_spp as u64);
        let t = mapper.map_samples(spp as f64)?.t_star;
        let g = mc_vs_gaussian_gap(&LinearImage::from_render(&low), Some(&var), &reference, spp as u64, &mapper.schedule, t, &config)?;
        println!(
            "{spp:>5} {t:>7} {:>12.4e} {:>12.4e} {:>8.2} {:>10.3e}",
            g.mmd,
            g.mmd_baseline,
            g.mmd_ratio(),
            g.moment
        );
    }
    Ok(())
}
