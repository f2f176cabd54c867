use nalgebra::UnitQuaternion;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::microworld::geometry::{CameraPose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian,
    Dropout,
}

/// Per-primitive noise. Gaussian noise perturbs continuous outputs by
/// N(0, sigma²); dropout removes each unit (fact, pixel, cell, item) with
/// probability `drop_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma,
            drop_prob: 0.0,
            seed,
        }
    }

    pub fn dropout(drop_prob: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Dropout,
            sigma: 0.0,
            drop_prob,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(format!("sigma {} must be finite and nonnegative", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(format!("drop_prob {} outside [0, 1]", self.drop_prob));
        }
        if self.kind == NoiseKind::None && (self.sigma != 0.0 || self.drop_prob != 0.0) {
            return Err("kind none requires sigma = 0 and drop_prob = 0".into());
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => self.sigma,
            _ => 0.0,
        }
    }

    pub fn drop_prob(&self) -> f64 {
        match self.kind {
            NoiseKind::Dropout => self.drop_prob,
            _ => 0.0,
        }
    }
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

pub(crate) fn dropped(rng: &mut impl Rng, p: f64) -> bool {
    p > 0.0 && rng.random::<f64>() < p
}

/// Rotation `q · exp(ω)` with ω ~ N(0, σ²I) and translation plus N(0, σ²I).
pub(crate) fn perturb_pose(pose: &CameraPose, sigma: f64, rng: &mut impl Rng) -> CameraPose {
    if sigma == 0.0 {
        return *pose;
    }
    let omega = Vec3::new(normal(rng, sigma), normal(rng, sigma), normal(rng, sigma));
    let dt = Vec3::new(normal(rng, sigma), normal(rng, sigma), normal(rng, sigma));
    let rotation = *pose.rotation() * UnitQuaternion::from_scaled_axis(omega);
    CameraPose::new(rotation, pose.translation() + dt, pose.fov_deg())
        .expect("perturbed pose keeps a valid fov")
}
