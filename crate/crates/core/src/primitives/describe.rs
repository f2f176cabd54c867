//! Fact enumeration over a scene, shared by the text primitives and the
//! suite generators.

use std::collections::BTreeSet;

use crate::facts::{Axis, Fact, Quadrant, Relation};
use crate::grid::Grid;
use crate::microworld::geometry::CameraPose;
use crate::microworld::oracle::{projected_center, spatial_relation};
use crate::microworld::scene::{Category, Scene};

/// Category counts for the categories present among `ids`, then the total.
pub fn count_facts(scene: &Scene, ids: &[u32]) -> Vec<Fact> {
    let mut out = Vec::new();
    for &category in Category::ALL {
        let count = ids
            .iter()
            .filter_map(|&id| scene.object(id))
            .filter(|o| o.category == category)
            .count();
        if count > 0 {
            out.push(Fact::CategoryCount { category, count });
        }
    }
    out.push(Fact::TotalCount { count: ids.len() });
    out
}

pub fn attribute_facts(scene: &Scene, ids: &[u32]) -> Vec<Fact> {
    ids.iter()
        .filter_map(|&id| scene.object(id))
        .map(|o| Fact::Attribute {
            id: o.id,
            color: o.color,
            category: o.category,
        })
        .collect()
}

/// Image quadrant of each object's projected centre.
pub fn layout_facts(scene: &Scene, cam: &CameraPose, view: u32, ids: &[u32]) -> Vec<Fact> {
    ids.iter()
        .filter_map(|&id| {
            let o = scene.object(id)?;
            let (x, y) = projected_center(cam, &o.center())?;
            Some(Fact::InQuadrant {
                id,
                quadrant: Quadrant::of_point(x, y, 0.0, 0.0),
                view,
            })
        })
        .collect()
}

/// Horizontal then vertical relation for every pair `a < b`.
pub fn relation_facts(scene: &Scene, cam: &CameraPose, view: u32, ids: &[u32]) -> Vec<Fact> {
    let mut out = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            for axis in [Axis::Horizontal, Axis::Vertical] {
                if let Ok(label) = spatial_relation(scene, cam, a, b, axis) {
                    let relation: Relation = axis.relation(label).expect("label from axis");
                    out.push(Fact::Spatial {
                        a,
                        relation,
                        b,
                        view,
                    });
                }
            }
        }
    }
    out
}

/// Ids sorted nearest first by the camera-frame depth of their centres.
pub fn depth_sorted(scene: &Scene, cam: &CameraPose, ids: &[u32]) -> Vec<u32> {
    let mut keyed: Vec<(f64, u32)> = ids
        .iter()
        .filter_map(|&id| {
            let o = scene.object(id)?;
            Some((cam.world_to_camera(&o.center()).z, id))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, id)| id).collect()
}

/// Front/back chain between depth-adjacent objects.
pub fn depth_order_facts(scene: &Scene, cam: &CameraPose, view: u32, ids: &[u32]) -> Vec<Fact> {
    depth_sorted(scene, cam, ids)
        .windows(2)
        .map(|w| Fact::InFront {
            front: w[0],
            back: w[1],
            view,
        })
        .collect()
}

/// Pairs whose silhouettes touch in the id grid, nearer object first.
pub fn occlusion_facts(scene: &Scene, cam: &CameraPose, view: u32, ids: &Grid<u32>) -> Vec<Fact> {
    let mut pairs = BTreeSet::new();
    for (r, c, &id) in ids.indexed() {
        if id == 0 {
            continue;
        }
        let neighbours = [(r + 1, c), (r, c + 1)];
        for (nr, nc) in neighbours {
            if nr >= ids.height() || nc >= ids.width() {
                continue;
            }
            let other = *ids.get(nr, nc);
            if other != 0 && other != id {
                pairs.insert((id.min(other), id.max(other)));
            }
        }
    }
    pairs
        .into_iter()
        .filter_map(|(a, b)| {
            let sorted = depth_sorted(scene, cam, &[a, b]);
            (sorted.len() == 2).then(|| Fact::Occludes {
                front: sorted[0],
                back: sorted[1],
                view,
            })
        })
        .collect()
}
