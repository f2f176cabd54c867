//! Procedural sphere scenes.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{CameraPose, Vec3};

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EXTENT: f64 = 2.0;
pub const MAX_OBJECTS: usize = 32;
pub const MIN_RADIUS: f64 = 0.05;
pub const MAX_RADIUS: f64 = 1.0;
const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene generation failed after {0} rejection attempts")]
    GenerationFailed(usize),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("unsupported scene format version {0}")]
    Version(u32),
    #[error("scene json: {0}")]
    Json(String),
}

macro_rules! closed_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn parse(s: &str) -> Option<$name> {
                $name::ALL.iter().copied().find(|v| v.as_str() == s)
            }

            pub fn code(self) -> u8 {
                $name::ALL.iter().position(|v| *v == self).unwrap() as u8
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_enum!(
    /// Object category label. Geometry is always a sphere.
    Category {
        Cube => "cube",
        Sphere => "sphere",
        Cylinder => "cylinder",
        Cone => "cone",
        Lamp => "lamp",
        Plant => "plant",
        Chair => "chair",
        Table => "table",
    }
);

closed_enum!(Color {
    Red => "red",
    Green => "green",
    Blue => "blue",
    Yellow => "yellow",
    Purple => "purple",
    Orange => "orange",
    White => "white",
    Black => "black",
});

closed_enum!(Difficulty {
    Easy => "easy",
    Medium => "medium",
    Hard => "hard",
});

impl Difficulty {
    pub fn object_range(self) -> (usize, usize) {
        match self {
            Difficulty::Easy => (2, 4),
            Difficulty::Medium => (5, 10),
            Difficulty::Hard => (11, 32),
        }
    }

    fn radius_range(self) -> (f64, f64) {
        match self {
            Difficulty::Easy => (0.3, 0.6),
            Difficulty::Medium => (0.2, 0.45),
            Difficulty::Hard => (0.1, 0.3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    /// Nonzero; 0 is the background id in renders.
    pub id: u32,
    pub category: Category,
    pub color: Color,
    pub position: [f64; 3],
    pub radius: f64,
}

impl SceneObject {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn describe(&self) -> String {
        format!("{} {}", self.color, self.category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct Scene {
    objects: Vec<SceneObject>,
    extent: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    objects: Vec<SceneObject>,
    extent: f64,
    seed: u64,
}

impl TryFrom<SceneFile> for Scene {
    type Error = SceneError;

    fn try_from(f: SceneFile) -> Result<Self, SceneError> {
        if f.version != SCENE_FORMAT_VERSION {
            return Err(SceneError::Version(f.version));
        }
        Scene::new(f.objects, f.extent, f.seed)
    }
}

impl From<Scene> for SceneFile {
    fn from(s: Scene) -> Self {
        SceneFile {
            version: SCENE_FORMAT_VERSION,
            objects: s.objects,
            extent: s.extent,
            seed: s.seed,
        }
    }
}

impl Scene {
    /// Validates every scene invariant.
    pub fn new(objects: Vec<SceneObject>, extent: f64, seed: u64) -> Result<Self, SceneError> {
        let invalid = |m: String| Err(SceneError::Invalid(m));
        if !(extent.is_finite() && extent > 0.0) {
            return invalid(format!("extent {extent}"));
        }
        if objects.is_empty() || objects.len() > MAX_OBJECTS {
            return invalid(format!("{} objects", objects.len()));
        }
        for (i, o) in objects.iter().enumerate() {
            if o.id == 0 || objects[..i].iter().any(|p| p.id == o.id) {
                return invalid(format!("bad or duplicate id {}", o.id));
            }
            if !(MIN_RADIUS..=MAX_RADIUS).contains(&o.radius) {
                return invalid(format!("object {} radius {}", o.id, o.radius));
            }
            if o.position.iter().any(|c| !c.is_finite() || c.abs() > extent) {
                return invalid(format!("object {} outside extent", o.id));
            }
            for p in &objects[..i] {
                if (o.center() - p.center()).norm() <= o.radius + p.radius {
                    return invalid(format!("objects {} and {} interpenetrate", p.id, o.id));
                }
            }
        }
        Ok(Self {
            objects,
            extent,
            seed,
        })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count_category(&self, category: Category) -> usize {
        self.objects
            .iter()
            .filter(|o| o.category == category)
            .count()
    }

    /// Fixed overview camera used as the principal view when a task has no views.
    pub fn canonical_camera(&self) -> CameraPose {
        let e = self.extent;
        CameraPose::look_at(Vec3::new(0.0, -3.0 * e, 1.0 * e), Vec3::zeros(), 60.0)
            .expect("canonical camera is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        serde_json::from_str(s).map_err(|e| SceneError::Json(e.to_string()))
    }
}

/// Deterministic in `(seed, difficulty)`, default extent.
pub fn generate_scene(seed: u64, difficulty: Difficulty) -> Result<Scene, SceneError> {
    generate_scene_in(seed, difficulty, DEFAULT_EXTENT)
}

pub fn generate_scene_in(
    seed: u64,
    difficulty: Difficulty,
    extent: f64,
) -> Result<Scene, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = difficulty.object_range();
    let count = rng.random_range(lo..=hi);
    let (rmin, rmax) = difficulty.radius_range();
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let mut attempts = 0;
    while objects.len() < count {
        if attempts >= MAX_REJECTIONS {
            return Err(SceneError::GenerationFailed(attempts));
        }
        attempts += 1;
        let radius = rng.random_range(rmin..=rmax);
        let position = [
            rng.random_range(-extent..=extent),
            rng.random_range(-extent..=extent),
            rng.random_range(-extent..=extent),
        ];
        let category = Category::ALL[rng.random_range(0..Category::ALL.len())];
        let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
        let center = Vec3::from(position);
        let clear = objects
            .iter()
            .all(|o| (o.center() - center).norm() > o.radius + radius);
        if clear {
            objects.push(SceneObject {
                id: objects.len() as u32 + 1,
                category,
                color,
                position,
                radius,
            });
        }
    }
    Scene::new(objects, extent, seed)
}

/// Random viewpoint on a shell around the scene looking roughly at its centre.
pub fn sample_camera(rng: &mut impl Rng, extent: f64, fov_deg: f64) -> CameraPose {
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let elevation = rng.random_range(-0.35..0.7_f64);
    let distance = rng.random_range(2.5 * extent..3.0 * extent);
    let eye = Vec3::new(
        distance * elevation.cos() * azimuth.cos(),
        distance * elevation.cos() * azimuth.sin(),
        distance * elevation.sin(),
    );
    let target = Vec3::new(
        rng.random_range(-0.3..0.3) * extent,
        rng.random_range(-0.3..0.3) * extent,
        rng.random_range(-0.3..0.3) * extent,
    );
    CameraPose::look_at(eye, target, fov_deg).expect("sampled camera is valid")
}
