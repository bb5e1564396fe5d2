use rayon::prelude::*;

use super::scene::Scene;
use super::stats::PixelStats;
use super::trace::trace_path;
use super::vec3::Rgb;
use super::PathTracerError;
use crate::rng::{stream_key, CounterRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderOptions {
    pub spp: u32,
    pub seed: u64,
    pub max_depth: u32,
}

impl RenderOptions {
    pub fn new(spp: u32, seed: u64) -> Self {
        Self { spp, seed, max_depth: 2 }
    }

    pub fn with_max_depth(mut self, max_depth: u32) -> Self {
        self.max_depth = max_depth;
        self
    }
}

/// Image plus per-pixel statistics, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Render {
    pub width: usize,
    pub height: usize,
    pub image: Vec<Rgb>,
    pub stats: Vec<PixelStats>,
    /// Object seen through each pixel centre.
    pub first_hit: Vec<Option<usize>>,
}

impl Render {
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Renders `scene` with `spp` camera paths per pixel.
///
/// Sample `k` of pixel `p` draws from the stream keyed by `(seed, p, k)`, so
/// the output is identical for any thread count or scheduling order.
pub fn render(scene: &Scene, opts: &RenderOptions) -> Result<Render, PathTracerError> {
    if opts.spp == 0 {
        return Err(PathTracerError::InvalidSpp);
    }
    if opts.max_depth == 0 {
        return Err(PathTracerError::InvalidDepth);
    }
    let (width, height) = (scene.camera.width, scene.camera.height);
    if width == 0 || height == 0 {
        return Err(PathTracerError::EmptyImage);
    }

    let pixels: Vec<(PixelStats, Option<usize>)> = (0..width * height)
        .into_par_iter()
        .map(|p| {
            let ray = scene.camera.primary_ray(p % width, p / width);
            let mut stats = PixelStats::new();
            let mut first_hit = None;
            for k in 0..opts.spp {
                let mut rng = CounterRng::new(opts.seed, &[p as u64, k as u64]);
                let sample = trace_path(scene, &ray, &mut rng, opts.max_depth)?;
                first_hit = sample.first_hit;
                stats.push(&sample);
            }
            Ok((stats, first_hit))
        })
        .collect::<Result<_, PathTracerError>>()?;

    let (stats, first_hit): (Vec<_>, Vec<_>) = pixels.into_iter().unzip();
    Ok(Render {
        width,
        height,
        image: stats.iter().map(PixelStats::mean).collect(),
        stats,
        first_hit,
    })
}

/// Estimator variance against sample count.
#[derive(Clone, Debug, PartialEq)]
pub struct CltScaling {
    /// `(spp, pixel-averaged variance of the luminance estimate)`.
    pub points: Vec<(u32, f64)>,
    /// Least-squares slope of `ln variance` against `ln spp`.
    pub slope: f64,
}

/// Variance over `replicates` independent renders of each pixel's luminance
/// estimate, averaged over pixels. Replicate `r` renders with the seed keyed
/// by `(seed, spp, r)`.
pub fn replicate_variance(scene: &Scene, opts: &RenderOptions, replicates: usize) -> Result<f64, PathTracerError> {
    if replicates < 2 {
        return Err(PathTracerError::InvalidScene("replicate variance needs at least 2 replicates".into()));
    }
    let lum: Vec<Vec<f64>> = (0..replicates)
        .map(|r| {
            let seed = stream_key(opts.seed, &[opts.spp as u64, r as u64]);
            let img = render(scene, &RenderOptions { seed, ..*opts })?;
            Ok(img.image.iter().map(|p| p.luminance()).collect())
        })
        .collect::<Result<_, PathTracerError>>()?;
    let npix = lum[0].len();
    let k = replicates as f64;
    let total: f64 = (0..npix)
        .map(|p| {
            let mean = lum.iter().map(|l| l[p]).sum::<f64>() / k;
            lum.iter().map(|l| (l[p] - mean).powi(2)).sum::<f64>() / (k - 1.0)
        })
        .sum();
    Ok(total / npix as f64)
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn clt_scaling(scene: &Scene, spps: &[u32], replicates: usize, seed: u64, max_depth: u32) -> Result<CltScaling, PathTracerError> {
    let points = spps
        .iter()
        .map(|&n| Ok((n, replicate_variance(scene, &RenderOptions::new(n, seed).with_max_depth(max_depth), replicates)?)))
        .collect::<Result<Vec<_>, PathTracerError>>()?;
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(CltScaling {
        slope: least_squares_slope(&xs, &ys),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathtracer::material::Material;
    use crate::pathtracer::scene::{Camera, Environment, Object, Shape};
    use crate::pathtracer::vec3::Vec3;

    fn camera(w: usize, h: usize) -> Camera {
        Camera {
            position: Vec3::new(0.0, 0.0, 4.0),
            look_at: Vec3::ZERO,
            up: Vec3::new(0.0, 1.0, 0.0),
            vfov_deg: 35.0,
            width: w,
            height: h,
        }
    }

    fn sky() -> Environment {
        Environment::Gradient {
            zenith: Rgb::new(0.3, 0.5, 1.0),
            horizon: Rgb::splat(1.0),
            ground: Rgb::splat(0.2),
        }
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = [16.0f64, 64.0, 256.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 1.0 * x).collect();
        assert!((least_squares_slope(&xs, &ys) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn environment_only_is_exact_at_one_spp() {
        let env = sky();
        let scene = Scene::new(camera(9, 7), vec![], vec![], env.clone()).unwrap();
        let r = render(&scene, &RenderOptions::new(1, 3)).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let want = env.radiance(scene.camera.primary_ray(x, y).dir);
                assert_eq!(r.image[r.index(x, y)], want);
            }
        }
    }

    #[test]
    fn rejects_zero_spp() {
        let scene = Scene::new(camera(2, 2), vec![], vec![], sky()).unwrap();
        assert!(matches!(render(&scene, &RenderOptions::new(0, 0)), Err(PathTracerError::InvalidSpp)));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let glossy = Material::new(Rgb::new(0.9, 0.7, 0.5), 0.2, 0.6, Rgb::splat(0.04)).unwrap();
        let scene = Scene::new(
            camera(12, 10),
            vec![("g".into(), glossy)],
            vec![Object {
                shape: Shape::Sphere {
                    center: Vec3::ZERO,
                    radius: 1.0,
                },
                material: 0,
                emission: Rgb::ZERO,
            }],
            sky(),
        )
        .unwrap();
        let opts = RenderOptions::new(16, 99);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| render(&scene, &opts)).unwrap();
        let b = four.install(|| render(&scene, &opts)).unwrap();
        assert_eq!(a, b);
    }
}
