//! Rigid camera poses, the fixed textual pose record and canonical camera motions.
//!
//! Conventions: a [`CameraPose`] maps camera coordinates to world coordinates.
//! `translation` is the camera centre in world space. The camera frame is
//! x right, y down, z forward (optical axis); the world frame is z up.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

pub const MIN_FOV_DEG: f64 = 20.0;
pub const MAX_FOV_DEG: f64 = 120.0;
pub const DEFAULT_FOV_DEG: f64 = 60.0;
/// Default translation for canonical motions, meters.
pub const DEFAULT_MOTION_STEP: f64 = 0.5;

const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {0} is not 1 within 1e-9")]
    NonUnitQuaternion(f64),
    #[error("field of view {0} deg outside [20, 120]")]
    FovOutOfRange(f64),
    #[error("non-finite pose component")]
    NonFinite,
    #[error("motion step must be finite and non-negative, got {0}")]
    InvalidStep(f64),
    #[error("malformed pose record: {0}")]
    MalformedRecord(String),
}

/// Camera-to-world rigid transform plus horizontal field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct CameraPose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
    fov_deg: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    /// (w, x, y, z)
    rotation: [f64; 4],
    translation: [f64; 3],
    fov_deg: f64,
}

impl TryFrom<PoseRepr> for CameraPose {
    type Error = GeometryError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        let q = Quaternion::new(r.rotation[0], r.rotation[1], r.rotation[2], r.rotation[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion(norm));
        }
        CameraPose::new(
            UnitQuaternion::new_normalize(q),
            Vec3::from(r.translation),
            r.fov_deg,
        )
    }
}

impl From<CameraPose> for PoseRepr {
    fn from(p: CameraPose) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
            fov_deg: p.fov_deg,
        }
    }
}

impl CameraPose {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vec3,
        fov_deg: f64,
    ) -> Result<Self, GeometryError> {
        let q = rotation.quaternion();
        if !(q.coords.iter().all(|c| c.is_finite()) && translation.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::NonFinite);
        }
        if !(MIN_FOV_DEG..=MAX_FOV_DEG).contains(&fov_deg) {
            return Err(GeometryError::FovOutOfRange(fov_deg));
        }
        Ok(Self {
            rotation,
            translation,
            fov_deg,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
            fov_deg: DEFAULT_FOV_DEG,
        }
    }

    /// Camera at `eye` whose optical axis points at `target`, with world z as up.
    pub fn look_at(eye: Vec3, target: Vec3, fov_deg: f64) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let mut up = Vec3::z();
        if forward.cross(&up).norm() < 1e-6 {
            up = Vec3::y();
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        Self::new(rotation, eye, fov_deg)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }

    pub fn with_fov(mut self, fov_deg: f64) -> Result<Self, GeometryError> {
        if !(MIN_FOV_DEG..=MAX_FOV_DEG).contains(&fov_deg) {
            return Err(GeometryError::FovOutOfRange(fov_deg));
        }
        self.fov_deg = fov_deg;
        Ok(self)
    }

    /// `self ∘ other`: apply `other` first, then `self`. Keeps `other`'s fov.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            fov_deg: other.fov_deg,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let inv = self.rotation.inverse();
        CameraPose {
            rotation: inv,
            translation: -(inv * self.translation),
            fov_deg: self.fov_deg,
        }
    }

    /// World point into this camera's frame.
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn right_axis(&self) -> Vec3 {
        self.rotation * Vec3::x()
    }

    pub fn down_axis(&self) -> Vec3 {
        self.rotation * Vec3::y()
    }

    pub fn forward_axis(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }
}

/// `b` expressed in `a`'s frame, i.e. `a⁻¹ ∘ b`.
pub fn relative_pose(a: &CameraPose, b: &CameraPose) -> CameraPose {
    a.inverse().compose(b)
}

/// The four canonical view-synthesis motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Up,
    Down,
    Left,
    Right,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Up, Motion::Down, Motion::Left, Motion::Right];

    /// Displacement in the camera frame for a move of `step` meters.
    pub fn camera_offset(self, step: f64) -> Vec3 {
        match self {
            Motion::Up => Vec3::new(0.0, -step, 0.0),
            Motion::Down => Vec3::new(0.0, step, 0.0),
            Motion::Left => Vec3::new(-step, 0.0, 0.0),
            Motion::Right => Vec3::new(step, 0.0, 0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Motion::Up => "up",
            Motion::Down => "down",
            Motion::Left => "left",
            Motion::Right => "right",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Motion::Up => 0,
            Motion::Down => 1,
            Motion::Left => 2,
            Motion::Right => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Motion> {
        Motion::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Motion {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Motion::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| GeometryError::MalformedRecord(format!("unknown motion {s:?}")))
    }
}

/// Translates the camera along its own up/right axes. Rotation is unchanged.
pub fn apply_canonical_motion(
    cam: &CameraPose,
    motion: Motion,
    step: f64,
) -> Result<CameraPose, GeometryError> {
    if !step.is_finite() || step < 0.0 {
        return Err(GeometryError::InvalidStep(step));
    }
    let mut moved = *cam;
    moved.translation += cam.rotation * motion.camera_offset(step);
    Ok(moved)
}

/// Textual pose record `R=(qw,qx,qy,qz) t=(tx,ty,tz)` at four decimals.
///
/// Components are stored already rounded so `parse(format(r)) == r` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

fn round4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl PoseRecord {
    pub fn from_pose(pose: &CameraPose) -> Self {
        let q = pose.rotation.quaternion();
        // q and -q are the same rotation; fix the sign so qw >= 0.
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        PoseRecord {
            q: [
                round4(s * q.w),
                round4(s * q.i),
                round4(s * q.j),
                round4(s * q.k),
            ],
            t: [
                round4(pose.translation.x),
                round4(pose.translation.y),
                round4(pose.translation.z),
            ],
        }
    }

    /// Back to a pose; the quaternion is renormalised.
    pub fn to_pose(&self, fov_deg: f64) -> Result<CameraPose, GeometryError> {
        let q = Quaternion::new(self.q[0], self.q[1], self.q[2], self.q[3]);
        if q.norm() < 1e-6 {
            return Err(GeometryError::MalformedRecord("zero quaternion".into()));
        }
        CameraPose::new(
            UnitQuaternion::new_normalize(q),
            Vec3::from(self.t),
            fov_deg,
        )
    }
}

impl fmt::Display for PoseRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [qw, qx, qy, qz] = self.q;
        let [tx, ty, tz] = self.t;
        write!(
            f,
            "R=({qw:.4},{qx:.4},{qy:.4},{qz:.4}) t=({tx:.4},{ty:.4},{tz:.4})"
        )
    }
}

fn parse_tuple<const N: usize>(s: &str, prefix: &str) -> Result<[f64; N], GeometryError> {
    let bad = || GeometryError::MalformedRecord(s.to_string());
    let inner = s
        .strip_prefix(prefix)
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(bad)?;
    let mut out = [0.0; N];
    let mut parts = inner.split(',');
    for slot in out.iter_mut() {
        let part = parts.next().ok_or_else(bad)?;
        let v: f64 = part.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        *slot = round4(v);
    }
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(out)
}

impl FromStr for PoseRecord {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, t) = s
            .trim()
            .split_once(' ')
            .ok_or_else(|| GeometryError::MalformedRecord(s.to_string()))?;
        Ok(PoseRecord {
            q: parse_tuple::<4>(r, "R=")?,
            t: parse_tuple::<3>(t, "t=")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let t = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        CameraPose::new(rot, t, rng.random_range(20.0..120.0)).unwrap()
    }

    fn assert_pose_close(a: &CameraPose, b: &CameraPose, tol: f64) {
        let angle = a.rotation().angle_to(b.rotation());
        assert!(angle <= tol, "rotation differs by {angle}");
        assert!((a.translation() - b.translation()).norm() <= tol);
    }

    #[test]
    fn relative_pose_of_self_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_pose(&mut rng);
        let rel = relative_pose(&a, &a);
        assert!(rel.rotation().angle() < 1e-12);
        assert!(rel.translation().norm() < 1e-12);
    }

    #[test]
    fn shift_along_own_x_axis_reads_as_unit_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_pose(&mut rng);
        let b = CameraPose::new(
            *a.rotation(),
            a.translation() + a.right_axis(),
            a.fov_deg(),
        )
        .unwrap();
        let rel = relative_pose(&a, &b);
        assert!(rel.rotation().angle() < 1e-12);
        assert!((rel.translation() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn relative_poses_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let chained = relative_pose(&a, &b).compose(&relative_pose(&b, &c));
            assert_pose_close(&chained, &relative_pose(&a, &c), 1e-9);
            assert_pose_close(&a.compose(&a.inverse()), &CameraPose::identity(), 1e-9);
        }
    }

    #[test]
    fn up_then_down_returns_home() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_pose(&mut rng);
        let up = apply_canonical_motion(&a, Motion::Up, 0.5).unwrap();
        let back = apply_canonical_motion(&up, Motion::Down, 0.5).unwrap();
        assert!((back.translation() - a.translation()).norm() < 1e-12);
        assert_eq!(back.rotation(), a.rotation());
        let still = apply_canonical_motion(&a, Motion::Left, 0.0).unwrap();
        assert!((still.translation() - a.translation()).norm() < 1e-12);
        assert!(apply_canonical_motion(&a, Motion::Left, -1.0).is_err());
    }

    #[test]
    fn motions_move_along_camera_axes() {
        let cam = CameraPose::look_at(Vec3::new(0.0, -5.0, 0.0), Vec3::zeros(), 60.0).unwrap();
        let right = apply_canonical_motion(&cam, Motion::Right, 1.0).unwrap();
        // Looking along +y with z up, the camera's right is +x.
        assert!((right.translation() - Vec3::new(1.0, -5.0, 0.0)).norm() < 1e-12);
        let up = apply_canonical_motion(&cam, Motion::Up, 1.0).unwrap();
        assert!((up.translation() - Vec3::new(0.0, -5.0, 1.0)).norm() < 1e-12);
        assert_eq!(Motion::ALL.len(), 4);
    }

    #[test]
    fn record_round_trips_at_four_decimals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let rec = PoseRecord::from_pose(&p);
            let text = rec.to_string();
            let parsed: PoseRecord = text.parse().unwrap();
            assert_eq!(parsed, rec);
            assert_eq!(parsed.to_string(), text);
            assert_pose_close(&rec.to_pose(p.fov_deg()).unwrap(), &p, 1e-3);
        }
    }

    #[test]
    fn identity_record_text() {
        let rec = PoseRecord::from_pose(&CameraPose::identity());
        assert_eq!(
            rec.to_string(),
            "R=(1.0000,0.0000,0.0000,0.0000) t=(0.0000,0.0000,0.0000)"
        );
    }

    #[test]
    fn malformed_records_rejected() {
        for bad in [
            "",
            "R=(1,0,0) t=(0,0,0)",
            "R=(1,0,0,0) t=(0,0)",
            "R=(1,0,0,0)t=(0,0,0)",
            "R=(a,0,0,0) t=(0,0,0)",
        ] {
            assert!(bad.parse::<PoseRecord>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn fov_and_norm_validated() {
        assert!(CameraPose::identity().with_fov(10.0).is_err());
        let json = r#"{"rotation":[1.1,0,0,0],"translation":[0,0,0],"fov_deg":60}"#;
        assert!(serde_json::from_str::<CameraPose>(json).is_err());
        let json = r#"{"rotation":[1,0,0,0],"translation":[0,0,0],"fov_deg":60}"#;
        assert_eq!(
            serde_json::from_str::<CameraPose>(json).unwrap(),
            CameraPose::identity()
        );
    }
}
