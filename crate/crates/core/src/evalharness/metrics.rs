use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microworld::geometry::CameraPose;
use crate::microworld::render::DepthMap;

/// Translations shorter than this have no direction.
pub const DIRECTION_EPS: f64 = 1e-9;
pub const DELTA1_THRESHOLD: f64 = 1.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no atoms to score")]
    EmptyAtoms,
    #[error("atom score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("no pixel is valid in both maps")]
    NoValidPixels,
    #[error("depth maps differ in shape")]
    ShapeMismatch,
}

/// Geometric mean of per-atom scores; zero if any score is zero.
pub fn soft_tifa_gm(scores: &[f64]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyAtoms);
    }
    if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MetricError::ScoreOutOfRange(s));
    }
    if scores.contains(&0.0) {
        return Ok(0.0);
    }
    let mean_log = scores.iter().map(|s| s.ln()).sum::<f64>() / scores.len() as f64;
    Ok(mean_log.exp())
}

/// Fraction of all-atoms-satisfied tasks per atom count. Panics on `k == 0`.
pub fn atomicity_buckets(results: &[(usize, bool)]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &(k, ok) in results {
        assert!(k >= 1, "atom count must be at least 1");
        let e = acc.entry(k).or_insert((0, 0));
        e.0 += ok as usize;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (hits, n))| (k, hits as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub trans_angle_deg: f64,
}

/// Geodesic rotation error, translation distance, and the angle between
/// translation directions (0 when either is shorter than [`DIRECTION_EPS`]).
pub fn pose_metrics(pred: &CameraPose, gt: &CameraPose) -> PoseErrors {
    // Chordal form: exactly zero for identical rotations.
    let (a, b) = (gt.rotation().quaternion(), pred.rotation().quaternion());
    let (minus, plus) = ((a - b).norm(), (a + b).norm());
    let rot = 4.0 * minus.min(plus).atan2(minus.max(plus));
    let (tp, tg) = (pred.translation(), gt.translation());
    let angle = if tp.norm() < DIRECTION_EPS || tg.norm() < DIRECTION_EPS {
        0.0
    } else {
        tp.cross(tg).norm().atan2(tp.dot(tg))
    };
    PoseErrors {
        rot_err_deg: rot.to_degrees(),
        trans_err: (tp - tg).norm(),
        trans_angle_deg: angle.to_degrees(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthErrors {
    pub abs_rel: f64,
    pub delta1: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// AbsRel and delta1 over pixels valid and positive in both maps, after
/// scaling the prediction by `median(gt) / median(pred)`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthErrors, MetricError> {
    if !pred.grid.same_shape(&gt.grid) || !pred.valid.same_shape(&gt.valid) {
        return Err(MetricError::ShapeMismatch);
    }
    let pairs: Vec<(f64, f64)> = pred
        .grid
        .cells()
        .iter()
        .zip(pred.valid.cells())
        .zip(gt.grid.cells().iter().zip(gt.valid.cells()))
        .filter(|((&p, &pv), (&g, &gv))| pv && gv && p > 0.0 && g > 0.0)
        .map(|((&p, _), (&g, _))| (p, g))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::NoValidPixels);
    }
    let scale = {
        let mut g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mut p: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        median(&mut g) / median(&mut p)
    };
    let n = pairs.len() as f64;
    let mut abs_rel = 0.0;
    let mut hits = 0usize;
    for &(p, g) in &pairs {
        let p = p * scale;
        abs_rel += (p - g).abs() / g;
        if (p / g).max(g / p) < DELTA1_THRESHOLD {
            hits += 1;
        }
    }
    Ok(DepthErrors {
        abs_rel: abs_rel / n,
        delta1: hits as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::microworld::geometry::Vec3;
    use nalgebra::UnitQuaternion;

    #[test]
    fn gm_examples() {
        assert_eq!(soft_tifa_gm(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(soft_tifa_gm(&[1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!((soft_tifa_gm(&[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(soft_tifa_gm(&[]), Err(MetricError::EmptyAtoms));
    }

    #[test]
    fn buckets_examples() {
        assert_eq!(atomicity_buckets(&[(3, true)]), BTreeMap::from([(3, 1.0)]));
        let b = atomicity_buckets(&[(1, true), (1, false), (2, false), (1, true)]);
        assert_eq!(b, BTreeMap::from([(1, 2.0 / 3.0), (2, 0.0)]));
    }

    #[test]
    fn pose_examples() {
        let gt = CameraPose::new(
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vec3::new(1.0, 2.0, 3.0),
            60.0,
        )
        .unwrap();
        let e = pose_metrics(&gt, &gt);
        assert_eq!((e.rot_err_deg, e.trans_err, e.trans_angle_deg), (0.0, 0.0, 0.0));
        let rz = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), 10f64.to_radians());
        let pred = CameraPose::new(gt.rotation() * rz, *gt.translation(), 60.0).unwrap();
        assert!((pose_metrics(&pred, &gt).rot_err_deg - 10.0).abs() < 1e-9);
        let zero = CameraPose::identity();
        assert_eq!(pose_metrics(&zero, &zero).trans_angle_deg, 0.0);
    }

    #[test]
    fn depth_examples() {
        let gt = DepthMap {
            grid: Grid::from_cells(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            valid: Grid::filled(2, 2, true),
        };
        let e = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((e.abs_rel, e.delta1), (0.0, 1.0));
        let doubled = DepthMap {
            grid: gt.grid.map(|d| 2.0 * d),
            valid: gt.valid.clone(),
        };
        assert!(depth_metrics(&doubled, &gt).unwrap().abs_rel < 1e-15);
        let none = DepthMap {
            grid: gt.grid.clone(),
            valid: Grid::filled(2, 2, false),
        };
        assert_eq!(depth_metrics(&none, &gt), Err(MetricError::NoValidPixels));
    }

    #[test]
    fn depth_ten_percent_on_half() {
        // gt all 2.0; pred 2.2 on two pixels. Medians: gt 2.0, pred 2.1.
        let gt = DepthMap {
            grid: Grid::filled(2, 2, 2.0),
            valid: Grid::filled(2, 2, true),
        };
        let pred = DepthMap {
            grid: Grid::from_cells(2, 2, vec![2.2, 2.2, 2.0, 2.0]).unwrap(),
            valid: Grid::filled(2, 2, true),
        };
        let s: f64 = 2.0 / 2.1;
        let want = (2.0 * (2.2 * s - 2.0).abs() / 2.0 + 2.0 * (2.0 - 2.0 * s).abs() / 2.0) / 4.0;
        let e = depth_metrics(&pred, &gt).unwrap();
        assert!((e.abs_rel - want).abs() < 1e-15);
        assert_eq!(e.delta1, 1.0);
    }
}
