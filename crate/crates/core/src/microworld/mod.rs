//! Synthetic sphere world: scenes, cameras, renders and the exact answers
//! every metric is scored against.

pub mod geometry;
pub mod oracle;
pub mod render;
pub mod scene;

pub use geometry::{
    apply_canonical_motion, relative_pose, CameraPose, GeometryError, Motion, PoseRecord, Vec3,
};
pub use oracle::{fact_holds, oracle_answer, projected_center, spatial_relation, OracleError};
pub use render::{
    render_depth, render_view, render_view_sized, DepthMap, Intrinsics, ViewRender,
};
pub use scene::{
    generate_scene, generate_scene_in, sample_camera, Category, Color, Difficulty, Scene,
    SceneError, SceneObject,
};
