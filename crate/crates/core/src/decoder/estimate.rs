//! Object position estimates from depth pixels and frame transforms between
//! views.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix4, Vector4};

use crate::grid::Grid;
use crate::microworld::geometry::{CameraPose, Vec3};
use crate::microworld::render::Intrinsics;
use crate::microworld::scene::{MAX_RADIUS, MIN_RADIUS};
use crate::workspace::{Payload, Workspace};

/// Back-projected surface points per object id.
pub fn object_points(
    ids: &Grid<u32>,
    depth: &Grid<f64>,
    valid: impl Fn(usize, usize) -> bool,
    intr: &Intrinsics,
) -> BTreeMap<u32, Vec<Vec3>> {
    let mut out: BTreeMap<u32, Vec<Vec3>> = BTreeMap::new();
    for (r, c, &id) in ids.indexed() {
        let d = *depth.get(r, c);
        if id == 0 || !(d > 0.0) || !valid(r, c) {
            continue;
        }
        out.entry(id).or_default().push(intr.back_project(r, c, d));
    }
    out
}

/// Algebraic least-squares sphere centre: solves
/// |p|² = 2 c·p + k for (c, k) by normal equations.
pub fn fit_sphere(points: &[Vec3]) -> Option<(Vec3, f64)> {
    if points.len() < 4 {
        return None;
    }
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for p in points {
        let row = Vector4::new(2.0 * p.x, 2.0 * p.y, 2.0 * p.z, 1.0);
        ata += row * row.transpose();
        atb += row * p.norm_squared();
    }
    let svd = ata.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-12 {
        return None;
    }
    let x = svd.solve(&atb, smax * 1e-14).ok()?;
    let center = Vec3::new(x[0], x[1], x[2]);
    let r2 = x[3] + center.norm_squared();
    if !(r2 > 0.0) || !center.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((center, r2.sqrt()))
}

/// Sphere-fit centre when plausible, otherwise the point centroid.
pub fn estimate_center(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    if let Some((c, r)) = fit_sphere(points) {
        if (0.5 * MIN_RADIUS..=2.0 * MAX_RADIUS).contains(&r) && c.z > 0.0 {
            return Some(c);
        }
    }
    Some(points.iter().sum::<Vec3>() / points.len() as f64)
}

/// Rigid maps between view frames given by the workspace's pose items.
pub struct FrameGraph {
    /// (from, to) -> (pose of `to` in `from`'s frame, item index)
    edges: BTreeMap<(u32, u32), (CameraPose, usize)>,
}

impl FrameGraph {
    pub fn from_workspace(w: &Workspace) -> Self {
        let mut edges = BTreeMap::new();
        for (i, item) in w.items().iter().enumerate() {
            if let Payload::Pose(p) = item.payload() {
                let Ok(rec) = p.parsed() else { continue };
                let Ok(pose) = rec.to_pose(60.0) else { continue };
                edges.entry((p.from_view, p.to_view)).or_insert((pose, i));
                edges.entry((p.to_view, p.from_view)).or_insert((pose.inverse(), i));
            }
        }
        Self { edges }
    }

    /// Transform taking points in frame `from` to frame `to`, with the pose
    /// items it relies on.
    pub fn path(&self, from: u32, to: u32) -> Option<(CameraPose, Vec<usize>)> {
        if from == to {
            return Some((CameraPose::identity(), Vec::new()));
        }
        // Breadth-first over views; a path to→…→from composes poses of
        // later frames in earlier ones.
        let mut prev: BTreeMap<u32, (u32, CameraPose, usize)> = BTreeMap::new();
        let mut queue = VecDeque::from([to]);
        while let Some(f) = queue.pop_front() {
            if f == from {
                break;
            }
            for (&(a, b), &(pose, item)) in self.edges.range((f, 0)..=(f, u32::MAX)) {
                debug_assert_eq!(a, f);
                if b != to && !prev.contains_key(&b) {
                    prev.insert(b, (f, pose, item));
                    queue.push_back(b);
                }
            }
        }
        let mut node = from;
        let mut chain = Vec::new();
        while node != to {
            let &(parent, pose, item) = prev.get(&node)?;
            chain.push((pose, item));
            node = parent;
        }
        // chain runs from `from` towards `to`: each pose is `node` in
        // `parent`'s frame, so compose outward-in.
        let mut total = CameraPose::identity();
        let mut items = Vec::new();
        for (pose, item) in chain.into_iter().rev() {
            total = total.compose(&pose);
            items.push(item);
        }
        items.sort_unstable();
        items.dedup();
        Some((total, items))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_fit_recovers_exact_centre() {
        let c = Vec3::new(0.3, -0.2, 4.0);
        let r = 0.4;
        let pts: Vec<Vec3> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.3;
                let spread = 0.2 + 0.05 * i as f64;
                let dir = Vec3::new(t.cos() * spread, t.sin() * spread, -1.0).normalize();
                c + dir * r
            })
            .collect();
        let (fc, fr) = fit_sphere(&pts).unwrap();
        assert!((fc - c).norm() < 1e-9);
        assert!((fr - r).abs() < 1e-9);
    }

    #[test]
    fn few_points_fall_back_to_centroid() {
        let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0)];
        assert_eq!(estimate_center(&pts).unwrap(), Vec3::new(0.5, 0.0, 1.0));
    }
}
