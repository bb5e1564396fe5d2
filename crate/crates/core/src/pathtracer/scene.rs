//! Analytic scenes: spheres and planes under an environment light, plus a
//! pinhole camera. Scenes load from a TOML document with the sections
//! `camera`, `materials`, `objects` and `environment`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::material::Material;
use super::vec3::{Rgb, Vec3};
use super::{PathTracerError, SceneError};

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self { origin, dir }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Environment {
    Constant { radiance: Rgb },
    /// Sky gradient over the world `+y` axis: `horizon → zenith` above the
    /// horizon and `horizon → ground` below it.
    Gradient { zenith: Rgb, horizon: Rgb, ground: Rgb },
}

impl Environment {
    pub fn radiance(&self, dir: Vec3) -> Rgb {
        match *self {
            Environment::Constant { radiance } => radiance,
            Environment::Gradient { zenith, horizon, ground } => {
                let y = dir.y.clamp(-1.0, 1.0);
                if y >= 0.0 {
                    horizon.lerp(zenith, y)
                } else {
                    horizon.lerp(ground, -y)
                }
            }
        }
    }

    fn peak(&self) -> f64 {
        match *self {
            Environment::Constant { radiance } => radiance.max_elem(),
            Environment::Gradient { zenith, horizon, ground } => {
                zenith.max_elem().max(horizon.max_elem()).max(ground.max_elem())
            }
        }
    }

    fn colors(&self) -> Vec<Rgb> {
        match *self {
            Environment::Constant { radiance } => vec![radiance],
            Environment::Gradient { zenith, horizon, ground } => vec![zenith, horizon, ground],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Plane { point: Vec3, normal: Vec3 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Object {
    pub shape: Shape,
    pub material: usize,
    pub emission: Rgb,
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Geometric normal, flipped to face the incoming ray.
    pub normal: Vec3,
    pub object: usize,
}

impl Shape {
    fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(ray.dir);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|&t| t > t_min && t < t_max)?;
                Some((t, (ray.at(t) - center) / radius))
            }
            Shape::Plane { point, normal } => {
                let denom = normal.dot(ray.dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (point - ray.origin).dot(normal) / denom;
                (t > t_min && t < t_max).then_some((t, normal))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    pub vfov_deg: f64,
    pub width: usize,
    pub height: usize,
}

fn default_up() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

impl Camera {
    /// Ray through the centre of pixel `(px, py)`; `py = 0` is the top row.
    pub fn primary_ray(&self, px: usize, py: usize) -> Ray {
        let forward = (self.look_at - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        let half_h = (self.vfov_deg.to_radians() * 0.5).tan();
        let half_w = half_h * self.width as f64 / self.height as f64;
        let sx = ((px as f64 + 0.5) / self.width as f64) * 2.0 - 1.0;
        let sy = 1.0 - ((py as f64 + 0.5) / self.height as f64) * 2.0;
        let dir = (forward + right * (sx * half_w) + up * (sy * half_h)).normalized();
        Ray::new(self.position, dir)
    }

    fn validate(&self) -> Result<(), PathTracerError> {
        if self.width == 0 || self.height == 0 {
            return Err(PathTracerError::EmptyImage);
        }
        let forward = self.look_at - self.position;
        if !(self.position.is_finite() && self.look_at.is_finite() && self.up.is_finite()) {
            return Err(PathTracerError::InvalidScene("camera vectors must be finite".into()));
        }
        if forward.length() == 0.0 || forward.cross(self.up).length() < 1e-12 {
            return Err(PathTracerError::InvalidScene("camera orientation is degenerate".into()));
        }
        if !(self.vfov_deg > 0.0 && self.vfov_deg < 180.0) {
            return Err(PathTracerError::InvalidScene("vfov_deg must lie in (0, 180)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub camera: Camera,
    pub materials: Vec<Material>,
    pub material_names: Vec<String>,
    pub objects: Vec<Object>,
    pub environment: Environment,
}

impl Scene {
    pub fn new(
        camera: Camera,
        materials: Vec<(String, Material)>,
        objects: Vec<Object>,
        environment: Environment,
    ) -> Result<Self, PathTracerError> {
        let (material_names, materials) = materials.into_iter().unzip();
        let scene = Self {
            camera,
            materials,
            material_names,
            objects,
            environment,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), PathTracerError> {
        self.camera.validate()?;
        for m in &self.materials {
            m.validate()?;
        }
        for c in self.environment.colors() {
            if !c.is_finite() || c.min_elem() < 0.0 {
                return Err(PathTracerError::InvalidScene("environment radiance must be finite and nonnegative".into()));
            }
        }
        let mut emits = self.environment.peak() > 0.0;
        for (i, o) in self.objects.iter().enumerate() {
            if o.material >= self.materials.len() {
                return Err(PathTracerError::InvalidScene(format!("object {i} references missing material")));
            }
            if !o.emission.is_finite() || o.emission.min_elem() < 0.0 {
                return Err(PathTracerError::InvalidScene(format!("object {i} has invalid emission")));
            }
            emits |= o.emission.max_elem() > 0.0;
            match o.shape {
                Shape::Sphere { center, radius } => {
                    if !center.is_finite() || !(radius > 0.0 && radius.is_finite()) {
                        return Err(PathTracerError::InvalidScene(format!(
                            "object {i}: sphere needs a finite centre and positive radius"
                        )));
                    }
                }
                Shape::Plane { point, normal } => {
                    if !point.is_finite() || !normal.is_finite() || normal.length() < 1e-12 {
                        return Err(PathTracerError::InvalidScene(format!(
                            "object {i}: plane needs a finite point and nonzero normal"
                        )));
                    }
                }
            }
        }
        if !emits {
            return Err(PathTracerError::InvalidScene("scene has no emitter with nonzero radiance".into()));
        }
        Ok(())
    }

    pub fn intersect(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut t_max = f64::INFINITY;
        for (i, o) in self.objects.iter().enumerate() {
            if let Some((t, n)) = o.shape.intersect(ray, t_min, t_max) {
                t_max = t;
                let normal = if n.dot(ray.dir) > 0.0 { -n } else { n };
                best = Some(Hit {
                    t,
                    point: ray.at(t),
                    normal,
                    object: i,
                });
            }
        }
        best
    }

    pub fn material_of(&self, object: usize) -> &Material {
        &self.materials[self.objects[object].material]
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        for section in ["camera", "materials", "objects", "environment"] {
            if !table.contains_key(section) {
                return Err(SceneError::MissingSection(section));
            }
        }
        let doc: SceneDoc = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        doc.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = SceneDoc {
            camera: self.camera.clone(),
            materials: self
                .material_names
                .iter()
                .cloned()
                .zip(self.materials.iter().copied())
                .collect(),
            objects: self
                .objects
                .iter()
                .map(|o| {
                    let material = self.material_names[o.material].clone();
                    let emission = (o.emission != Rgb::ZERO).then_some(o.emission);
                    match o.shape {
                        Shape::Sphere { center, radius } => ObjectDoc::Sphere {
                            center,
                            radius,
                            material,
                            emission,
                        },
                        Shape::Plane { point, normal } => ObjectDoc::Plane {
                            point,
                            normal,
                            material,
                            emission,
                        },
                    }
                })
                .collect(),
            environment: self.environment.clone(),
        };
        toml::to_string(&doc).expect("scene serialises")
    }
}

fn toml_error(text: &str, e: &toml::de::Error) -> SceneError {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    SceneError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    camera: Camera,
    materials: BTreeMap<String, Material>,
    objects: Vec<ObjectDoc>,
    environment: Environment,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ObjectDoc {
    Sphere {
        center: Vec3,
        radius: f64,
        material: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<Rgb>,
    },
    Plane {
        point: Vec3,
        normal: Vec3,
        material: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<Rgb>,
    },
}

impl SceneDoc {
    fn resolve(self) -> Result<Scene, SceneError> {
        let names: Vec<String> = self.materials.keys().cloned().collect();
        let lookup = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| SceneError::UnknownMaterial(name.to_string()))
        };
        let mut objects = Vec::with_capacity(self.objects.len());
        for o in self.objects {
            let (shape, material, emission) = match o {
                ObjectDoc::Sphere {
                    center,
                    radius,
                    material,
                    emission,
                } => (Shape::Sphere { center, radius }, material, emission),
                ObjectDoc::Plane {
                    point,
                    normal,
                    material,
                    emission,
                } => (
                    Shape::Plane {
                        point,
                        normal: normal.normalized(),
                    },
                    material,
                    emission,
                ),
            };
            objects.push(Object {
                shape,
                material: lookup(&material)?,
                emission: emission.unwrap_or(Rgb::ZERO),
            });
        }
        Scene::new(self.camera, self.materials.into_iter().collect(), objects, self.environment)
            .map_err(SceneError::Invalid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[camera]
position = [0.0, 0.0, 4.0]
look_at = [0.0, 0.0, 0.0]
vfov_deg = 30.0
width = 8
height = 6

[materials.white]
albedo = [0.8, 0.8, 0.8]
roughness = 0.5
metallic = 0.0

[[objects]]
type = "sphere"
center = [0.0, 0.0, 0.0]
radius = 1.0
material = "white"

[environment]
type = "constant"
radiance = [0.5, 0.5, 0.5]
"#;

    #[test]
    fn parses_minimal_scene() {
        let s = Scene::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.camera.width, 8);
        assert_eq!(s.materials[0].f0, Rgb::splat(0.04));
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scene::from_toml_str(MINIMAL).unwrap();
        let again = Scene::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn missing_camera_is_named() {
        let text = MINIMAL.replace("[camera]", "[camera_typo]");
        match Scene::from_toml_str(&text) {
            Err(SceneError::MissingSection(name)) => assert_eq!(name, "camera"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_position() {
        let text = MINIMAL.replace("radius = 1.0", "radius = = 1.0");
        match Scene::from_toml_str(&text) {
            Err(SceneError::Parse { line, column, .. }) => {
                assert_eq!(line, 17);
                assert!(column > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_material_and_bad_radius() {
        let text = MINIMAL.replace("material = \"white\"", "material = \"nope\"");
        assert!(matches!(Scene::from_toml_str(&text), Err(SceneError::UnknownMaterial(_))));
        let text = MINIMAL.replace("radius = 1.0", "radius = -1.0");
        assert!(matches!(Scene::from_toml_str(&text), Err(SceneError::Invalid(_))));
    }

    #[test]
    fn rejects_dark_scene() {
        let text = MINIMAL.replace("radiance = [0.5, 0.5, 0.5]", "radiance = [0.0, 0.0, 0.0]");
        assert!(matches!(Scene::from_toml_str(&text), Err(SceneError::Invalid(_))));
    }

    #[test]
    fn sphere_hit_from_outside() {
        let s = Scene::from_toml_str(MINIMAL).unwrap();
        let hit = s.intersect(&Ray::new(Vec3::new(0.0, 0.0, 4.0), Vec3::new(0.0, 0.0, -1.0)), 1e-9).unwrap();
        assert!((hit.t - 3.0).abs() < 1e-12);
        assert!((hit.normal.z - 1.0).abs() < 1e-12);
    }
}
