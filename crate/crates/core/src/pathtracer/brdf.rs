//! Cook–Torrance BRDF with a Lambertian diffuse lobe, split into its
//! diffuse and specular parts.

use std::f64::consts::PI;

use super::material::Material;
use super::vec3::{Rgb, Vec3};
use super::PathTracerError;

/// Lower clamp on `(n·wo)(n·wi)` in the specular denominator.
pub const GRAZING_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrdfValue {
    pub diffuse: Rgb,
    pub specular: Rgb,
}

impl BrdfValue {
    pub fn total(&self) -> Rgb {
        self.diffuse + self.specular
    }
}

/// Trowbridge–Reitz (GGX) normal distribution.
#[inline]
pub fn ggx_d(alpha: f64, n_dot_h: f64) -> f64 {
    let a2 = alpha * alpha;
    let t = (a2 - 1.0) * n_dot_h * n_dot_h + 1.0;
    a2 / (PI * t * t)
}

/// Schlick's Fresnel approximation.
#[inline]
pub fn schlick_fresnel(f0: f64, cos_theta: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - cos_theta).powi(5)
}

/// Separable Schlick-GGX geometry term `G1(n·wi) G1(n·wo)`.
#[inline]
pub fn smith_g(cos_i: f64, cos_o: f64, k: f64) -> f64 {
    let g1 = |c: f64| c / (c * (1.0 - k) + k);
    g1(cos_i) * g1(cos_o)
}

/// Evaluates `(f_d, f_s)` for the pair of directions.
///
/// `f_d = k_d c / π` with `k_d = (1 − F)(1 − m)`, and
/// `f_s = D F G / (4 (n·wo)(n·wi))`. Both directions must lie strictly above
/// the surface.
pub fn brdf_eval(material: &Material, n: Vec3, wo: Vec3, wi: Vec3) -> Result<BrdfValue, PathTracerError> {
    let cos_o = n.dot(wo);
    let cos_i = n.dot(wi);
    if cos_o <= 0.0 || cos_i <= 0.0 {
        return Err(PathTracerError::BelowHemisphere { cos_o, cos_i });
    }
    Ok(eval_unchecked(material, n, wo, wi, cos_o, cos_i))
}

#[inline]
pub(crate) fn eval_unchecked(material: &Material, n: Vec3, wo: Vec3, wi: Vec3, cos_o: f64, cos_i: f64) -> BrdfValue {
    let one_minus_m = 1.0 - material.metallic;
    let lambert = material.albedo * (one_minus_m / PI);
    if !material.has_specular_lobe() {
        return BrdfValue {
            diffuse: lambert,
            specular: Rgb::ZERO,
        };
    }

    let h = (wi + wo).normalized();
    let n_dot_h = n.dot(h).clamp(0.0, 1.0);
    let v_dot_h = h.dot(wo).clamp(0.0, 1.0);
    let alpha = material.alpha();
    let d = ggx_d(alpha, n_dot_h);
    let g = smith_g(cos_i, cos_o, material.geometry_k_mode.k(alpha));
    let fresnel = material.effective_f0().map(|f0| schlick_fresnel(f0, v_dot_h));
    let denom = 4.0 * (cos_o * cos_i).max(GRAZING_EPSILON);

    BrdfValue {
        diffuse: (Rgb::ONE - fresnel).mul_elem(lambert),
        specular: fresnel * (d * g / denom),
    }
}
