use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::facts::extract_facts;
use crate::grid::Grid;
use crate::microworld::render::DepthMap;
use crate::primitives::DEPTH_BUCKET_METERS;
use crate::workspace::{Payload, TaskInput, Workspace, DEPTH_BUCKETS};

use super::{Answer, AnswerPayload, DecoderConfig, Evidence};

pub const MIN_MARGIN: f64 = 0.01;
pub const MAX_SWEEPS: usize = 100;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("orderings contain a cycle through object {0}")]
    InfeasibleConstraints(u32),
    #[error("ordering references object {0} absent from the render")]
    UnknownObject(u32),
    #[error("margin {0} below the minimum {MIN_MARGIN}")]
    MarginTooSmall(f64),
    #[error("depth map and id grid differ in shape")]
    ShapeMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub map: DepthMap,
    /// Every ordering holds with the requested margin.
    pub converged: bool,
    pub sweeps: usize,
}

fn find_cycle(orderings: &[(u32, u32)]) -> Option<u32> {
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(f, b) in orderings {
        adj.entry(f).or_default().push(b);
        adj.entry(b).or_default();
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut state: BTreeMap<u32, u8> = adj.keys().map(|&k| (k, 0)).collect();
    for &start in adj.keys() {
        if state[&start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state.insert(start, 1);
        while let Some((node, next)) = stack.pop() {
            if let Some(&child) = adj[&node].get(next) {
                stack.push((node, next + 1));
                match state[&child] {
                    0 => {
                        state.insert(child, 1);
                        stack.push((child, 0));
                    }
                    1 => return Some(child),
                    _ => {}
                }
            } else {
                state.insert(node, 2);
            }
        }
    }
    None
}

/// Shifts each object's pixels so per-object mean depths satisfy every
/// `(front, back)` ordering as `mean(back) - mean(front) >= margin`, using
/// Dykstra's alternating projection onto the ordering half-spaces; the
/// result approximates the least-squares closest set of means.
pub fn constraint_project(
    depth: &DepthMap,
    ids: &Grid<u32>,
    orderings: &[(u32, u32)],
    margin: f64,
) -> Result<Projection, ConstraintError> {
    if margin < MIN_MARGIN {
        return Err(ConstraintError::MarginTooSmall(margin));
    }
    if !ids.same_shape(&depth.grid) {
        return Err(ConstraintError::ShapeMismatch);
    }
    if orderings.is_empty() {
        return Ok(Projection {
            map: depth.clone(),
            converged: true,
            sweeps: 0,
        });
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for ((&id, &d), &valid) in ids.cells().iter().zip(depth.grid.cells()).zip(depth.valid.cells()) {
        if id != 0 && valid {
            let e = sums.entry(id).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
        }
    }
    for &(f, b) in orderings {
        for id in [f, b] {
            if !sums.contains_key(&id) {
                return Err(ConstraintError::UnknownObject(id));
            }
        }
    }
    if let Some(id) = find_cycle(orderings) {
        return Err(ConstraintError::InfeasibleConstraints(id));
    }
    let original: BTreeMap<u32, f64> = sums.iter().map(|(&k, &(s, n))| (k, s / n as f64)).collect();
    let mut means = original.clone();
    // Project with a hair of extra margin so float rounding cannot leave a
    // constraint just short.
    let target = margin * (1.0 + 1e-9) + 1e-12;
    let mut increments = vec![(0.0f64, 0.0f64); orderings.len()];
    let mut sweeps = 0;
    let holds = |m: &BTreeMap<u32, f64>| {
        orderings
            .iter()
            .all(|&(f, b)| m[&b] - m[&f] >= margin - FEASIBILITY_TOL)
    };
    let mut converged = holds(&means);
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut moved = 0.0f64;
        for (j, &(f, b)) in orderings.iter().enumerate() {
            let (pf, pb) = increments[j];
            let xf = means[&f] + pf;
            let xb = means[&b] + pb;
            let gap = xb - xf;
            let (yf, yb) = if gap < target {
                let d = (target - gap) / 2.0;
                (xf - d, xb + d)
            } else {
                (xf, xb)
            };
            increments[j] = (xf - yf, xb - yb);
            moved = moved.max((yf - means[&f]).abs()).max((yb - means[&b]).abs());
            means.insert(f, yf);
            means.insert(b, yb);
        }
        converged = holds(&means) && moved < 1e-9;
    }
    let converged = holds(&means);
    let mut map = depth.clone();
    for ((&id, d), &valid) in ids.cells().iter().zip(map.grid.cells_mut()).zip(depth.valid.cells()) {
        if id != 0 && valid {
            if let (Some(new), Some(old)) = (means.get(&id), original.get(&id)) {
                *d = (*d + new - old).max(1e-3);
            }
        }
    }
    Ok(Projection {
        map,
        converged,
        sweeps,
    })
}

pub(super) fn decode(x: &TaskInput, w: &Workspace, cfg: &DecoderConfig, view: u32) -> (Answer, Evidence) {
    let mut ev = Evidence::default();
    let Some(rv) = x.view(view) else {
        ev.note("queried view missing; empty depth");
        let empty = DepthMap {
            grid: Grid::filled(1, 1, 0.0),
            valid: Grid::filled(1, 1, false),
        };
        return (
            Answer {
                kind: x.kind(),
                payload: AnswerPayload::Depth(empty),
                confidence: 0.0,
            },
            ev,
        );
    };
    let prior = x.spec.scale_hint.unwrap_or(1.0);
    let mut map = DepthMap {
        grid: rv.ids.map(|&id| if id != 0 { prior } else { 0.0 }),
        valid: rv.ids.map(|&id| id != 0),
    };

    let present: BTreeSet<u32> = rv.ids.cells().iter().copied().filter(|&i| i != 0).collect();
    let mut orderings = Vec::new();
    let mut text_items = Vec::new();
    for (i, item) in w.items().iter().enumerate() {
        let Payload::Text(t) = item.payload() else { continue };
        let mut used = false;
        for f in extract_facts(t) {
            if let Some((front, back, fv)) = f.depth_order() {
                if fv == view && present.contains(&front) && present.contains(&back) {
                    if !orderings.contains(&(front, back)) {
                        orderings.push((front, back));
                    }
                    used = true;
                }
            }
        }
        if used {
            text_items.push(i);
        }
    }
    if !orderings.is_empty() {
        match constraint_project(&map, &rv.ids, &orderings, cfg.depth_margin) {
            Ok(p) => {
                if !p.converged {
                    ev.note(format!("ordering projection stopped after {} sweeps", p.sweeps));
                }
                map = p.map;
                for &i in &text_items {
                    ev.cite(i, w.items()[i].hash(), "depth orderings");
                }
            }
            Err(e) => ev.note(format!("orderings ignored: {e}")),
        }
    }

    for (i, item) in w.items().iter().enumerate() {
        let Payload::VisualTokens(tg) = item.payload() else { continue };
        if tg.view != view || !cfg.token_depth_clamp {
            continue;
        }
        let (g_w, g_h) = (tg.cells.width(), tg.cells.height());
        let mut used = false;
        for (r, c, &id) in rv.ids.indexed() {
            if id == 0 {
                continue;
            }
            let t = tg.cells.get(r * g_h / rv.ids.height(), c * g_w / rv.ids.width());
            if t.id != id {
                continue;
            }
            let lo = t.bucket as f64 * DEPTH_BUCKET_METERS;
            let hi = if t.bucket + 1 >= DEPTH_BUCKETS {
                f64::INFINITY
            } else {
                lo + DEPTH_BUCKET_METERS
            };
            let d = map.grid.get_mut(r, c);
            *d = d.clamp(lo, hi);
            used = true;
        }
        if used {
            ev.cite(i, item.hash(), "depth buckets");
        }
    }

    for (i, item) in w.items().iter().enumerate() {
        let Payload::Depth(d) = item.payload() else { continue };
        if d.view != view || !d.map.grid.same_shape(&map.grid) {
            continue;
        }
        let mut used = false;
        for (r, c, &valid) in d.map.valid.indexed() {
            if valid && *map.valid.get(r, c) {
                map.grid.set(r, c, *d.map.grid.get(r, c));
                used = true;
            }
        }
        if used {
            ev.cite(i, item.hash(), "depth override");
        }
    }

    let k = ev.cited.len() as f64;
    (
        Answer {
            kind: x.kind(),
            payload: AnswerPayload::Depth(map),
            confidence: k / (k + 1.0),
        },
        ev,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_objects() -> (DepthMap, Grid<u32>) {
        let ids = Grid::from_cells(4, 1, vec![1, 1, 2, 2]).unwrap();
        let map = DepthMap {
            grid: Grid::from_cells(4, 1, vec![3.0, 3.2, 2.0, 2.2]).unwrap(),
            valid: Grid::filled(4, 1, true),
        };
        (map, ids)
    }

    #[test]
    fn empty_orderings_unchanged() {
        let (map, ids) = two_objects();
        let p = constraint_project(&map, &ids, &[], 0.01).unwrap();
        assert_eq!(p.map, map);
        assert!(p.converged);
    }

    #[test]
    fn single_violation_is_fixed_minimally() {
        let (map, ids) = two_objects();
        let p = constraint_project(&map, &ids, &[(1, 2)], 0.01).unwrap();
        assert!(p.converged);
        let mean = |id: u32| {
            let v: Vec<f64> = ids
                .cells()
                .iter()
                .zip(p.map.grid.cells())
                .filter(|(&i, _)| i == id)
                .map(|(_, &d)| d)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let gap = mean(2) - mean(1);
        assert!(gap >= 0.01, "gap {gap}");
        // Both means move by the same amount towards each other.
        assert!((mean(1) - 3.1 + (mean(2) - 2.1)).abs() < 1e-9);
        assert!((gap - 0.01).abs() < 1e-6);
    }

    #[test]
    fn cycles_are_infeasible() {
        let (map, ids) = two_objects();
        assert!(matches!(
            constraint_project(&map, &ids, &[(1, 2), (2, 1)], 0.01),
            Err(ConstraintError::InfeasibleConstraints(_))
        ));
    }
}
