use serde::{Deserialize, Serialize};

use super::vec3::Rgb;
use super::PathTracerError;

/// Choice of the Schlick-GGX remapping `k(α)` in the geometry term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKMode {
    /// `k = α² / 2`
    #[default]
    Direct,
    /// `k = (α + 1)² / 8`
    Ibl,
}

impl GeometryKMode {
    pub fn k(self, alpha: f64) -> f64 {
        match self {
            GeometryKMode::Direct => alpha * alpha / 2.0,
            GeometryKMode::Ibl => (alpha + 1.0) * (alpha + 1.0) / 8.0,
        }
    }
}

/// Metallic-workflow Cook–Torrance material. The microfacet width is the
/// roughness itself (`α = r`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub albedo: Rgb,
    pub roughness: f64,
    pub metallic: f64,
    #[serde(default = "default_f0")]
    pub f0: Rgb,
    #[serde(default)]
    pub geometry_k_mode: GeometryKMode,
}

fn default_f0() -> Rgb {
    Rgb::splat(0.04)
}

impl Material {
    pub fn new(albedo: Rgb, roughness: f64, metallic: f64, f0: Rgb) -> Result<Self, PathTracerError> {
        let m = Self {
            albedo,
            roughness,
            metallic,
            f0,
            geometry_k_mode: GeometryKMode::Direct,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_k_mode(mut self, mode: GeometryKMode) -> Self {
        self.geometry_k_mode = mode;
        self
    }

    pub fn diffuse(albedo: Rgb) -> Self {
        Self {
            albedo,
            roughness: 1.0,
            metallic: 0.0,
            f0: Rgb::ZERO,
            geometry_k_mode: GeometryKMode::Direct,
        }
    }

    pub fn validate(&self) -> Result<(), PathTracerError> {
        let unit_rgb = |v: Rgb| v.is_finite() && v.min_elem() >= 0.0 && v.max_elem() <= 1.0;
        if !unit_rgb(self.albedo) {
            return Err(PathTracerError::InvalidMaterial("albedo must lie in [0,1]".into()));
        }
        if !unit_rgb(self.f0) {
            return Err(PathTracerError::InvalidMaterial("f0 must lie in [0,1]".into()));
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(PathTracerError::InvalidMaterial(format!(
                "roughness must lie in (0,1], got {}",
                self.roughness
            )));
        }
        if !(0.0..=1.0).contains(&self.metallic) {
            return Err(PathTracerError::InvalidMaterial(format!(
                "metallic must lie in [0,1], got {}",
                self.metallic
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.roughness
    }

    /// Base reflectance after the metallic blend `lerp(F₀, albedo, m)`.
    #[inline]
    pub fn effective_f0(&self) -> Rgb {
        self.f0.lerp(self.albedo, self.metallic)
    }

    /// A zero effective base reflectance in every channel switches the
    /// specular lobe off entirely, Fresnel grazing term included.
    pub fn has_specular_lobe(&self) -> bool {
        self.effective_f0().max_elem() > 0.0
    }

    pub fn is_glossy(&self) -> bool {
        self.roughness <= 0.3 || self.metallic >= 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_roughness() {
        assert!(Material::new(Rgb::ONE, 0.0, 0.0, Rgb::splat(0.04)).is_err());
        assert!(Material::new(Rgb::ONE, 1e-3, 0.0, Rgb::splat(0.04)).is_ok());
    }

    #[test]
    fn rejects_out_of_range_channels() {
        assert!(Material::new(Rgb::splat(1.5), 0.5, 0.0, Rgb::splat(0.04)).is_err());
        assert!(Material::new(Rgb::ONE, 0.5, -0.1, Rgb::splat(0.04)).is_err());
        assert!(Material::new(Rgb::ONE, 0.5, 0.0, Rgb::splat(f64::NAN)).is_err());
    }

    #[test]
    fn k_modes() {
        assert_eq!(GeometryKMode::Direct.k(0.5), 0.125);
        assert_eq!(GeometryKMode::Ibl.k(0.5), 2.25 / 8.0);
    }
}
