//! Deterministic answer decoding from a task input and a workspace.

mod answer;
mod counting;
mod depth;
mod estimate;
mod generation;
mod spatial;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::facts::Query;
use crate::grid::Grid;
use crate::workspace::{TaskInput, Token, Workspace};

pub use answer::{Answer, AnswerPayload, AnswerRecord, Citation, Evidence};
pub use depth::{constraint_project, ConstraintError, Projection, MAX_SWEEPS, MIN_MARGIN};
pub use generation::token_supports;
pub use estimate::{estimate_center, fit_sphere, object_points, FrameGraph};

/// Vote weight per evidence source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalityWeights {
    pub raw: f64,
    pub text: f64,
    pub pose: f64,
    pub synth_view: f64,
    pub visual_tokens: f64,
    pub depth: f64,
}

impl Default for ModalityWeights {
    fn default() -> Self {
        Self {
            raw: 1.0,
            text: 1.0,
            pose: 2.0,
            synth_view: 2.0,
            visual_tokens: 2.0,
            depth: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub weights: ModalityWeights,
    /// Gap in metres enforced between ordered object means.
    pub depth_margin: f64,
    /// Minimum token-centroid separation, in cells, for a relation vote.
    pub token_margin_cells: f64,
    pub token_depth_clamp: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            weights: ModalityWeights::default(),
            depth_margin: 0.25,
            token_margin_cells: 1.0,
            token_depth_clamp: true,
        }
    }
}

/// Centroid per nonzero id in cell units, cell centres at `(col + 0.5, row + 0.5)`.
pub fn token_centroids(cells: &Grid<Token>) -> BTreeMap<u32, (f64, f64)> {
    let mut acc: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for (r, c, t) in cells.indexed() {
        if t.id == 0 {
            continue;
        }
        let e = acc.entry(t.id).or_insert((0.0, 0.0, 0));
        e.0 += c as f64 + 0.5;
        e.1 += r as f64 + 0.5;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(id, (u, v, n))| (id, (u / n as f64, v / n as f64)))
        .collect()
}

/// Decodes an answer and the items it relies on. Pure in its inputs.
pub fn decode(x: &TaskInput, w: &Workspace, cfg: &DecoderConfig) -> (Answer, Evidence) {
    match &x.query {
        Query::Spatial { view, a, b, axis } => spatial::decode(x, w, cfg, *view, *a, *b, *axis),
        Query::Count { category } => counting::decode(x, w, *category),
        Query::Depth { view } => depth::decode(x, w, cfg, *view),
        Query::Generate { atoms } => generation::decode(x, w, cfg, atoms),
    }
}
