use thiserror::Error;

use crate::decoder::{Answer, AnswerPayload};
use crate::facts::{Axis, Fact, Quadrant, Query};
use crate::workspace::TaskInput;

use super::geometry::{CameraPose, Vec3};
use super::render::render_depth;
use super::scene::Scene;

/// Objects closer than this to the camera plane have no defined image side.
const MIN_FRONT_DEPTH: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unanswerable task: {0}")]
    UnanswerableTask(String),
}

/// Normalized image-plane coordinates (x/z, y/z) of a world point, or `None`
/// when it is not in front of the camera.
pub fn projected_center(cam: &CameraPose, p: &Vec3) -> Option<(f64, f64)> {
    let c = cam.world_to_camera(p);
    (c.z > MIN_FRONT_DEPTH).then(|| (c.x / c.z, c.y / c.z))
}

/// Which label of `axis` relates object `a` to object `b` as seen from `cam`:
/// left means a smaller image x, above a smaller image y.
pub fn spatial_relation(
    scene: &Scene,
    cam: &CameraPose,
    a: u32,
    b: u32,
    axis: Axis,
) -> Result<&'static str, OracleError> {
    let locate = |id: u32| {
        let o = scene
            .object(id)
            .ok_or_else(|| OracleError::UnanswerableTask(format!("no object {id}")))?;
        projected_center(cam, &o.center())
            .ok_or_else(|| OracleError::UnanswerableTask(format!("object {id} behind camera")))
    };
    let (pa, pb) = (locate(a)?, locate(b)?);
    let (va, vb) = match axis {
        Axis::Horizontal => (pa.0, pb.0),
        Axis::Vertical => (pa.1, pb.1),
    };
    let [first, second] = axis.choices();
    if va < vb {
        Ok(first)
    } else if va > vb {
        Ok(second)
    } else {
        Err(OracleError::UnanswerableTask("objects coincide on axis".into()))
    }
}

/// Whether a fact holds in the scene. View-referencing facts use `cameras`
/// (1-based); views beyond the list are the scene's overview camera when the
/// list is empty.
pub fn fact_holds(scene: &Scene, cameras: &[CameraPose], fact: &Fact) -> Result<bool, OracleError> {
    let cam = |v: u32| -> Result<CameraPose, OracleError> {
        if cameras.is_empty() && v == 1 {
            return Ok(scene.canonical_camera());
        }
        cameras
            .get((v as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| OracleError::UnanswerableTask(format!("no view {v}")))
    };
    let object = |id: u32| {
        scene
            .object(id)
            .ok_or_else(|| OracleError::UnanswerableTask(format!("no object {id}")))
    };
    Ok(match *fact {
        Fact::Attribute {
            id,
            color,
            category,
        } => {
            let o = object(id)?;
            o.color == color && o.category == category
        }
        Fact::CategoryCount { category, count } => scene.count_category(category) == count,
        Fact::TotalCount { count } => scene.objects().len() == count,
        Fact::Spatial { a, relation, b, view } => {
            let axis = relation.axis();
            spatial_relation(scene, &cam(view)?, a, b, axis)? == axis.label(relation)
        }
        Fact::InQuadrant { id, quadrant, view } => {
            let c = cam(view)?;
            let o = object(id)?;
            match projected_center(&c, &o.center()) {
                Some((x, y)) => Quadrant::of_point(x, y, 0.0, 0.0) == quadrant,
                None => false,
            }
        }
        Fact::InFront { front, back, view } | Fact::Occludes { front, back, view } => {
            let c = cam(view)?;
            let (f, b) = (object(front)?, object(back)?);
            c.world_to_camera(&f.center()).z < c.world_to_camera(&b.center()).z
        }
    })
}

/// Exact answer computed from the scene itself.
pub fn oracle_answer(scene: &Scene, task: &TaskInput) -> Result<Answer, OracleError> {
    let payload = match &task.query {
        Query::Spatial { view, a, b, axis } => {
            let cam = task
                .spec
                .cameras
                .get(*view as usize - 1)
                .ok_or_else(|| OracleError::UnanswerableTask(format!("no view {view}")))?;
            AnswerPayload::Choice(spatial_relation(scene, cam, *a, *b, *axis)?.to_string())
        }
        Query::Count { category } => AnswerPayload::Count(match category {
            Some(c) => scene.count_category(*c),
            None => scene.objects().len(),
        } as u64),
        Query::Depth { view } => {
            let cam = task
                .spec
                .cameras
                .get(*view as usize - 1)
                .ok_or_else(|| OracleError::UnanswerableTask(format!("no view {view}")))?;
            AnswerPayload::Depth(render_depth(scene, cam))
        }
        Query::Generate { atoms } => {
            for atom in atoms {
                if !fact_holds(scene, &task.spec.cameras, atom)? {
                    return Err(OracleError::UnanswerableTask(format!(
                        "atom does not hold in scene: {atom}"
                    )));
                }
            }
            AnswerPayload::Atoms(vec![true; atoms.len()])
        }
    };
    Ok(Answer {
        kind: task.kind(),
        payload,
        confidence: 1.0,
    })
}
