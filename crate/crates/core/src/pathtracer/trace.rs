use super::brdf::eval_unchecked;
use super::sampling::sample_hemisphere_uniform;
use super::scene::{Ray, Scene};
use super::vec3::Rgb;
use super::PathTracerError;
use crate::rng::CounterRng;

/// Offset applied along the normal when spawning secondary rays.
const RAY_EPSILON: f64 = 1e-7;

/// One path's camera-bound radiance split by first-bounce lobe.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PathSample {
    pub f_diffuse: Rgb,
    pub f_specular: Rgb,
    /// Object hit by the camera ray, if any.
    pub first_hit: Option<usize>,
}

impl PathSample {
    pub fn total(&self) -> Rgb {
        self.f_diffuse + self.f_specular
    }
}

/// Traces one camera path.
///
/// At the first surface a single uniform hemisphere direction feeds both the
/// diffuse and the specular estimate. Radiance arriving along that direction
/// (including any further bounces, up to `max_depth` surfaces in total) is
/// folded into `L_i`. Paths that escape immediately return the environment
/// radiance in `f_diffuse` with a zero specular part, and emission seen
/// directly by the camera is likewise attributed to the diffuse channel.
pub fn trace_path(scene: &Scene, ray: &Ray, rng: &mut CounterRng, max_depth: u32) -> Result<PathSample, PathTracerError> {
    if max_depth == 0 {
        return Err(PathTracerError::InvalidDepth);
    }
    let Some(hit) = scene.intersect(ray, 0.0) else {
        return Ok(PathSample {
            f_diffuse: scene.environment.radiance(ray.dir),
            f_specular: Rgb::ZERO,
            first_hit: None,
        });
    };
    let object = &scene.objects[hit.object];
    let material = scene.material_of(hit.object);
    let n = hit.normal;
    let wo = -ray.dir;
    let (wi, pdf) = sample_hemisphere_uniform(rng, n);
    let cos_i = n.dot(wi);
    let cos_o = n.dot(wo);
    if cos_i <= 0.0 || cos_o <= 0.0 {
        return Ok(PathSample {
            f_diffuse: object.emission,
            f_specular: Rgb::ZERO,
            first_hit: Some(hit.object),
        });
    }
    let f = eval_unchecked(material, n, wo, wi, cos_o, cos_i);
    let li = incoming(scene, &Ray::new(hit.point + n * RAY_EPSILON, wi), rng, max_depth - 1);
    let weight = cos_i / pdf;
    Ok(PathSample {
        f_diffuse: object.emission + f.diffuse.mul_elem(li) * weight,
        f_specular: f.specular.mul_elem(li) * weight,
        first_hit: Some(hit.object),
    })
}

/// Radiance arriving along `ray` with `bounces` further surface interactions allowed.
fn incoming(scene: &Scene, ray: &Ray, rng: &mut CounterRng, bounces: u32) -> Rgb {
    let mut ray = *ray;
    let mut throughput = Rgb::ONE;
    let mut radiance = Rgb::ZERO;
    let mut remaining = bounces;
    loop {
        let Some(hit) = scene.intersect(&ray, 0.0) else {
            return radiance + throughput.mul_elem(scene.environment.radiance(ray.dir));
        };
        let object = &scene.objects[hit.object];
        radiance += throughput.mul_elem(object.emission);
        if remaining == 0 {
            return radiance;
        }
        remaining -= 1;
        let n = hit.normal;
        let wo = -ray.dir;
        let (wi, pdf) = sample_hemisphere_uniform(rng, n);
        let cos_i = n.dot(wi);
        let cos_o = n.dot(wo);
        if cos_i <= 0.0 || cos_o <= 0.0 {
            return radiance;
        }
        let f = eval_unchecked(scene.material_of(hit.object), n, wo, wi, cos_o, cos_i);
        throughput = throughput.mul_elem(f.total()) * (cos_i / pdf);
        ray = Ray::new(hit.point + n * RAY_EPSILON, wi);
    }
}
