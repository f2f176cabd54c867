use serde::{Deserialize, Serialize};

use crate::facts::Query;
use crate::grid::Grid;
use crate::microworld::geometry::CameraPose;
use crate::microworld::render::{render_view, Intrinsics, DEFAULT_RESOLUTION};
use crate::microworld::scene::Scene;

use super::payload::{legend_for, Appearance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    SpatialQA,
    Counting,
    DepthEstimation,
    GenerationSpec,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::SpatialQA,
        TaskKind::Counting,
        TaskKind::DepthEstimation,
        TaskKind::GenerationSpec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SpatialQA => "spatial_qa",
            TaskKind::Counting => "counting",
            TaskKind::DepthEstimation => "depth_estimation",
            TaskKind::GenerationSpec => "generation_spec",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn matches(self, q: &Query) -> bool {
        matches!(
            (self, q),
            (TaskKind::SpatialQA, Query::Spatial { .. })
                | (TaskKind::Counting, Query::Count { .. })
                | (TaskKind::DepthEstimation, Query::Depth { .. })
                | (TaskKind::GenerationSpec, Query::Generate { .. })
        )
    }
}

/// Serializable task description; views are given as cameras into the
/// task's scene and rendered on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    pub query: String,
    pub cameras: Vec<CameraPose>,
    /// Median visible depth of the queried view; depth tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_hint: Option<f64>,
}

/// What the decoder may see of one input view: object ids, appearance of the
/// visible objects and, except for depth tasks, per-pixel depth. Camera
/// extrinsics are deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RawView {
    /// 1-based view number.
    pub index: u32,
    pub intrinsics: Intrinsics,
    pub ids: Grid<u32>,
    pub depth: Option<Grid<f64>>,
    pub legend: Vec<Appearance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInput {
    pub spec: TaskSpec,
    pub query: Query,
    pub views: Vec<RawView>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid task {id}: {reason}")]
pub struct TaskError {
    pub id: String,
    pub reason: String,
}

impl TaskInput {
    pub fn new(spec: TaskSpec, scene: &Scene) -> Result<Self, TaskError> {
        let fail = |reason: String| TaskError {
            id: spec.id.clone(),
            reason,
        };
        let query: Query = spec
            .query
            .parse()
            .map_err(|_| fail(format!("unparseable query {:?}", spec.query)))?;
        if !spec.kind.matches(&query) {
            return Err(fail("query does not match task kind".into()));
        }
        let needs_view = matches!(spec.kind, TaskKind::SpatialQA | TaskKind::DepthEstimation);
        if needs_view && spec.cameras.is_empty() {
            return Err(fail("task needs at least one view".into()));
        }
        let view_ref = match &query {
            Query::Spatial { view, .. } | Query::Depth { view } => Some(*view),
            _ => None,
        };
        if let Some(v) = view_ref {
            if v == 0 || v as usize > spec.cameras.len() {
                return Err(fail(format!("query references missing view {v}")));
            }
        }
        let withhold_depth = spec.kind == TaskKind::DepthEstimation;
        let views = spec
            .cameras
            .iter()
            .enumerate()
            .map(|(i, cam)| {
                let r = render_view(scene, cam);
                RawView {
                    index: i as u32 + 1,
                    intrinsics: Intrinsics::new(DEFAULT_RESOLUTION, DEFAULT_RESOLUTION, cam.fov_deg()),
                    legend: legend_for(scene, &r.ids),
                    depth: (!withhold_depth).then_some(r.depth),
                    ids: r.ids,
                }
            })
            .collect();
        Ok(TaskInput { spec, query, views })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind
    }

    pub fn view(&self, index: u32) -> Option<&RawView> {
        self.views.iter().find(|v| v.index == index)
    }

    /// Camera of the principal view: view 1, or the scene's overview camera
    /// when the task has no views.
    pub fn principal_camera(&self, scene: &Scene) -> CameraPose {
        self.spec
            .cameras
            .first()
            .copied()
            .unwrap_or_else(|| scene.canonical_camera())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::scene::{generate_scene, Difficulty};

    #[test]
    fn depth_tasks_withhold_depth() {
        let scene = generate_scene(1, Difficulty::Easy).unwrap();
        let spec = TaskSpec {
            id: "d0".into(),
            kind: TaskKind::DepthEstimation,
            query: "estimate the depth map of view 1.".into(),
            cameras: vec![scene.canonical_camera()],
            scale_hint: Some(5.0),
        };
        let t = TaskInput::new(spec.clone(), &scene).unwrap();
        assert!(t.views[0].depth.is_none());
        let spatial = TaskSpec {
            kind: TaskKind::SpatialQA,
            query: "in view 1, is object 1 left or right of object 2?".into(),
            ..spec.clone()
        };
        assert!(TaskInput::new(spatial, &scene).unwrap().views[0].depth.is_some());
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let scene = generate_scene(1, Difficulty::Easy).unwrap();
        let spec = TaskSpec {
            id: "s".into(),
            kind: TaskKind::SpatialQA,
            query: "in view 2, is object 1 left or right of object 2?".into(),
            cameras: vec![scene.canonical_camera()],
            scale_hint: None,
        };
        assert!(TaskInput::new(spec.clone(), &scene).is_err());
        let no_views = TaskSpec {
            cameras: vec![],
            query: "in view 1, is object 1 left or right of object 2?".into(),
            ..spec.clone()
        };
        assert!(TaskInput::new(no_views, &scene).is_err());
        let wrong_kind = TaskSpec {
            kind: TaskKind::Counting,
            query: "in view 1, is object 1 left or right of object 2?".into(),
            ..spec
        };
        assert!(TaskInput::new(wrong_kind, &scene).is_err());
    }
}
