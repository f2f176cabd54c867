use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{token_supports, Answer, DecoderConfig};
use crate::facts::{Axis, Fact, Query, Relation};
use crate::microworld::geometry::{apply_canonical_motion, CameraPose, Motion, DEFAULT_FOV_DEG, DEFAULT_MOTION_STEP};
use crate::microworld::oracle::{fact_holds, oracle_answer, projected_center};
use crate::microworld::render::{render_depth, render_view, ViewRender};
use crate::microworld::scene::{generate_scene, sample_camera, Category, Difficulty, Scene};
use crate::primitives::{think_facts, token_grid, LONG_THINK_CAP, TOKEN_GRID_SIZE};
use crate::seed;
use crate::workspace::{TaskInput, TaskKind, TaskSpec, TokenGrid};

/// Pixels an object needs in a render to count as visible.
pub const MIN_VISIBLE_PIXELS: usize = 6;
/// Minimum separation of the two projected centres along the query axis,
/// in normalized image coordinates.
pub const RELATION_MARGIN: f64 = 0.08;
pub const MAX_ATOMS: usize = 8;
const MAX_ATTEMPTS: u64 = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("could not build task {index} of suite {suite} after {MAX_ATTEMPTS} attempts")]
    Exhausted { suite: String, index: usize },
    #[error("invalid suite spec: {0}")]
    Invalid(String),
    #[error("task {id}: {reason}")]
    Task { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Spatial,
    Depth,
    Counting,
    Generation,
}

impl SuiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SuiteKind::Spatial => "spatial",
            SuiteKind::Depth => "depth",
            SuiteKind::Counting => "counting",
            SuiteKind::Generation => "generation",
        }
    }

    pub fn parse(s: &str) -> Option<SuiteKind> {
        [SuiteKind::Spatial, SuiteKind::Depth, SuiteKind::Counting, SuiteKind::Generation]
            .into_iter()
            .find(|k| k.as_str() == s)
    }

    pub fn default_size(self) -> usize {
        match self {
            SuiteKind::Spatial => 200,
            SuiteKind::Depth => 100,
            SuiteKind::Counting => 100,
            SuiteKind::Generation => 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub name: String,
    pub kind: SuiteKind,
    pub seed: u64,
    pub size: usize,
    #[serde(default = "default_difficulty")]
    pub difficulty: Difficulty,
}

fn default_difficulty() -> Difficulty {
    Difficulty::Medium
}

impl SuiteSpec {
    pub fn new(kind: SuiteKind, seed: u64, size: usize) -> Self {
        Self {
            name: kind.as_str().to_string(),
            kind,
            seed,
            size,
            difficulty: Difficulty::Medium,
        }
    }

    pub fn build(&self) -> Result<TaskSuite, SuiteError> {
        if self.size == 0 {
            return Err(SuiteError::Invalid("suite size must be positive".into()));
        }
        let tasks = match self.kind {
            SuiteKind::Spatial => spatial_tasks(self)?,
            SuiteKind::Depth => depth_tasks(self)?,
            SuiteKind::Counting => counting_tasks(self)?,
            SuiteKind::Generation => generation_tasks(self)?,
        };
        Ok(TaskSuite {
            name: self.name.clone(),
            kind: self.kind,
            seed: self.seed,
            tasks,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteTask {
    pub spec: TaskSpec,
    pub scene: Scene,
    pub oracle: Answer,
    /// Construction category, e.g. which views see the queried objects.
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_count: Option<usize>,
}

impl SuiteTask {
    fn new(spec: TaskSpec, scene: Scene, tag: &str, atom_count: Option<usize>) -> Result<Self, SuiteError> {
        let fail = |reason: String| SuiteError::Task {
            id: spec.id.clone(),
            reason,
        };
        let x = TaskInput::new(spec.clone(), &scene).map_err(|e| fail(e.to_string()))?;
        let oracle = oracle_answer(&scene, &x).map_err(|e| fail(e.to_string()))?;
        Ok(Self {
            spec,
            scene,
            oracle,
            tag: tag.to_string(),
            atom_count,
        })
    }

    pub fn input(&self) -> TaskInput {
        TaskInput::new(self.spec.clone(), &self.scene).expect("suite tasks are valid")
    }

    /// Oracle answer recomputed from the scene.
    pub fn recompute_oracle(&self) -> Option<Answer> {
        oracle_answer(&self.scene, &self.input()).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub name: String,
    pub kind: SuiteKind,
    pub seed: u64,
    pub tasks: Vec<SuiteTask>,
}

impl TaskSuite {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("suite serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SuiteError> {
        serde_json::from_str(s).map_err(|e| SuiteError::Invalid(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn truncated(&self, n: usize) -> TaskSuite {
        TaskSuite {
            tasks: self.tasks.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

fn attempt_rng(spec: &SuiteSpec, index: usize, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed::mix(&[
        spec.seed,
        seed::str_seed(spec.kind.as_str()),
        index as u64,
        attempt,
    ]))
}

fn pixel_count(r: &ViewRender, id: u32) -> usize {
    r.ids.cells().iter().filter(|&&i| i == id).count()
}

/// Which raw views see the queried pair: `a` both in the query view, `b` one
/// missing there but both in the second view, `c` one missing from both views
/// but both shown by some synthesized view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpatialCase {
    Both,
    OtherView,
    Synthesized,
}

impl SpatialCase {
    fn for_index(i: usize) -> Self {
        match i % 10 {
            0 | 1 => SpatialCase::Both,
            2..=6 => SpatialCase::OtherView,
            _ => SpatialCase::Synthesized,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            SpatialCase::Both => "a",
            SpatialCase::OtherView => "b",
            SpatialCase::Synthesized => "c",
        }
    }
}

fn synth_renders(scene: &Scene, cams: &[CameraPose]) -> Vec<ViewRender> {
    let mut out = Vec::new();
    for cam in cams {
        for m in Motion::ALL {
            let moved = apply_canonical_motion(cam, m, DEFAULT_MOTION_STEP).expect("motion keeps camera valid");
            out.push(render_view(scene, &moved));
        }
    }
    out
}

fn spatial_attempt(
    scene: &Scene,
    cams: &[CameraPose; 2],
    case: SpatialCase,
    axis: Axis,
    rng: &mut ChaCha8Rng,
) -> Option<(u32, u32)> {
    let r1 = render_view(scene, &cams[0]);
    let r2 = render_view(scene, &cams[1]);
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let ids: Vec<u32> = scene.objects().iter().map(|o| o.id).collect();
    for &a in &ids {
        for &b in &ids {
            if a < b {
                pairs.push((a, b));
            }
        }
    }
    pairs.shuffle(rng);
    let mut synth: Option<Vec<ViewRender>> = None;
    for (a, b) in pairs {
        let (Some(pa), Some(pb)) = (
            projected_center(&cams[0], &scene.object(a)?.center()),
            projected_center(&cams[0], &scene.object(b)?.center()),
        ) else {
            continue;
        };
        let sep = match axis {
            Axis::Horizontal => (pa.0 - pb.0).abs(),
            Axis::Vertical => (pa.1 - pb.1).abs(),
        };
        if sep < RELATION_MARGIN {
            continue;
        }
        let seen = |r: &ViewRender, id: u32| pixel_count(r, id) >= MIN_VISIBLE_PIXELS;
        let hidden = |r: &ViewRender, id: u32| pixel_count(r, id) == 0;
        let ok = match case {
            SpatialCase::Both => seen(&r1, a) && seen(&r1, b),
            SpatialCase::OtherView => {
                ((hidden(&r1, a) && seen(&r1, b)) || (hidden(&r1, b) && seen(&r1, a)))
                    && seen(&r2, a)
                    && seen(&r2, b)
            }
            SpatialCase::Synthesized => {
                let pattern = |h: u32, v: u32| hidden(&r1, h) && hidden(&r2, h) && seen(&r1, v);
                (pattern(a, b) || pattern(b, a))
                    && synth
                        .get_or_insert_with(|| synth_renders(scene, cams))
                        .iter()
                        .any(|r| seen(r, a) && seen(r, b))
            }
        };
        if ok {
            return Some((a, b));
        }
    }
    None
}

fn spatial_tasks(spec: &SuiteSpec) -> Result<Vec<SuiteTask>, SuiteError> {
    let mut tasks = Vec::with_capacity(spec.size);
    let mut per_case = [0usize; 3];
    for index in 0..spec.size {
        let case = SpatialCase::for_index(index);
        let slot = case as usize;
        let want_first = per_case[slot] % 2 == 0;
        per_case[slot] += 1;
        let mut built = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = attempt_rng(spec, index, attempt);
            let scene = generate_scene(rng.random(), spec.difficulty)
                .map_err(|e| SuiteError::Invalid(e.to_string()))?;
            let cams = [
                sample_camera(&mut rng, scene.extent(), DEFAULT_FOV_DEG),
                sample_camera(&mut rng, scene.extent(), DEFAULT_FOV_DEG),
            ];
            let axis = if rng.random_bool(0.5) {
                Axis::Horizontal
            } else {
                Axis::Vertical
            };
            let Some((a, b)) = spatial_attempt(&scene, &cams, case, axis, &mut rng) else {
                continue;
            };
            let [first, _] = axis.choices();
            let a_first = {
                let (pa, pb) = (
                    projected_center(&cams[0], &scene.object(a).expect("id").center()).expect("in front"),
                    projected_center(&cams[0], &scene.object(b).expect("id").center()).expect("in front"),
                );
                match axis {
                    Axis::Horizontal => pa.0 < pb.0,
                    Axis::Vertical => pa.1 < pb.1,
                }
            };
            let (a, b) = if a_first == want_first { (a, b) } else { (b, a) };
            let query = Query::Spatial { view: 1, a, b, axis };
            let task_spec = TaskSpec {
                id: format!("{}-{index:04}", spec.name),
                kind: TaskKind::SpatialQA,
                query: query.to_string(),
                cameras: cams.to_vec(),
                scale_hint: None,
            };
            let t = SuiteTask::new(task_spec, scene, case.tag(), None)?;
            debug_assert_eq!(t.oracle.choice() == Some(first), want_first);
            built = Some(t);
            break;
        }
        tasks.push(built.ok_or_else(|| SuiteError::Exhausted {
            suite: spec.name.clone(),
            index,
        })?);
    }
    Ok(tasks)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn depth_tasks(spec: &SuiteSpec) -> Result<Vec<SuiteTask>, SuiteError> {
    let mut tasks = Vec::with_capacity(spec.size);
    for index in 0..spec.size {
        let mut built = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = attempt_rng(spec, index, attempt);
            let scene = generate_scene(rng.random(), spec.difficulty)
                .map_err(|e| SuiteError::Invalid(e.to_string()))?;
            let cam = sample_camera(&mut rng, scene.extent(), DEFAULT_FOV_DEG);
            let r = render_view(&scene, &cam);
            let visible: BTreeSet<u32> = r.ids.cells().iter().copied().filter(|&i| i != 0).collect();
            if visible.len() < 3 {
                continue;
            }
            let gt = render_depth(&scene, &cam);
            let depths: Vec<f64> = gt
                .grid
                .cells()
                .iter()
                .zip(gt.valid.cells())
                .filter(|(_, &v)| v)
                .map(|(&d, _)| d)
                .collect();
            let task_spec = TaskSpec {
                id: format!("{}-{index:04}", spec.name),
                kind: TaskKind::DepthEstimation,
                query: Query::Depth { view: 1 }.to_string(),
                cameras: vec![cam],
                scale_hint: Some(median(depths)),
            };
            built = Some(SuiteTask::new(task_spec, scene, "depth", None)?);
            break;
        }
        tasks.push(built.ok_or_else(|| SuiteError::Exhausted {
            suite: spec.name.clone(),
            index,
        })?);
    }
    Ok(tasks)
}

fn counting_tasks(spec: &SuiteSpec) -> Result<Vec<SuiteTask>, SuiteError> {
    let mut tasks = Vec::with_capacity(spec.size);
    for index in 0..spec.size {
        let mut rng = attempt_rng(spec, index, 0);
        let scene = generate_scene(rng.random(), spec.difficulty)
            .map_err(|e| SuiteError::Invalid(e.to_string()))?;
        let cam = sample_camera(&mut rng, scene.extent(), DEFAULT_FOV_DEG);
        let category = if index % 4 == 3 {
            None
        } else {
            let present: Vec<Category> = Category::ALL
                .iter()
                .copied()
                .filter(|&c| scene.count_category(c) > 0)
                .collect();
            Some(present[rng.random_range(0..present.len())])
        };
        let task_spec = TaskSpec {
            id: format!("{}-{index:04}", spec.name),
            kind: TaskKind::Counting,
            query: Query::Count { category }.to_string(),
            cameras: vec![cam],
            scale_hint: None,
        };
        let tag = if category.is_some() { "category" } else { "total" };
        tasks.push(SuiteTask::new(task_spec, scene, tag, None)?);
    }
    Ok(tasks)
}

/// Atoms the long think text or the visual tokens of the overview camera
/// establish, restricted to those true in the scene.
fn atom_pool(scene: &Scene) -> Result<Vec<Fact>, SuiteError> {
    let probe = TaskSpec {
        id: "probe".into(),
        kind: TaskKind::GenerationSpec,
        query: Query::Generate {
            atoms: vec![Fact::TotalCount {
                count: scene.objects().len(),
            }],
        }
        .to_string(),
        cameras: Vec::new(),
        scale_hint: None,
    };
    let x = TaskInput::new(probe, scene).map_err(|e| SuiteError::Invalid(e.to_string()))?;
    let mut pool: BTreeSet<Fact> = think_facts(&x, scene, LONG_THINK_CAP, true).into_iter().collect();
    let tg = TokenGrid {
        view: 1,
        cells: token_grid(scene, &scene.canonical_camera(), TOKEN_GRID_SIZE),
    };
    let cfg = DecoderConfig::default();
    let ids: Vec<u32> = scene.objects().iter().map(|o| o.id).collect();
    let mut candidates = vec![Fact::TotalCount { count: ids.len() }];
    for &a in &ids {
        for q in crate::facts::Quadrant::ALL {
            candidates.push(Fact::InQuadrant {
                id: a,
                quadrant: q,
                view: 1,
            });
        }
        for &b in &ids {
            if a == b {
                continue;
            }
            for relation in [Relation::LeftOf, Relation::Above] {
                candidates.push(Fact::Spatial { a, relation, b, view: 1 });
            }
            candidates.push(Fact::InFront {
                front: a,
                back: b,
                view: 1,
            });
        }
    }
    pool.extend(candidates.into_iter().filter(|f| token_supports(&tg, f, &cfg)));
    Ok(pool
        .into_iter()
        .filter(|f| fact_holds(scene, &[], f).unwrap_or(false))
        .collect())
}

fn generation_tasks(spec: &SuiteSpec) -> Result<Vec<SuiteTask>, SuiteError> {
    let per_k = spec.size / MAX_ATOMS;
    let extra = spec.size % MAX_ATOMS;
    let mut tasks = Vec::with_capacity(spec.size);
    let mut index = 0;
    for k in 1..=MAX_ATOMS {
        let n = per_k + usize::from(k <= extra);
        let all_attribute = n >> (k - 1);
        for j in 0..n {
            let attr_only = j < all_attribute;
            let mut built = None;
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = attempt_rng(spec, index, attempt);
                let scene = generate_scene(rng.random(), spec.difficulty)
                    .map_err(|e| SuiteError::Invalid(e.to_string()))?;
                let pool = atom_pool(&scene)?;
                let (mut attrs, mut others): (Vec<Fact>, Vec<Fact>) =
                    pool.into_iter().partition(|f| matches!(f, Fact::Attribute { .. }));
                attrs.shuffle(&mut rng);
                others.shuffle(&mut rng);
                let atoms: Vec<Fact> = if attr_only {
                    if attrs.len() < k {
                        continue;
                    }
                    attrs.truncate(k);
                    attrs
                } else {
                    let Some(first) = others.pop() else { continue };
                    let mut rest: Vec<Fact> = attrs.into_iter().chain(others).collect();
                    if rest.len() + 1 < k {
                        continue;
                    }
                    rest.shuffle(&mut rng);
                    rest.truncate(k - 1);
                    rest.push(first);
                    rest.shuffle(&mut rng);
                    rest
                };
                let task_spec = TaskSpec {
                    id: format!("{}-{index:04}", spec.name),
                    kind: TaskKind::GenerationSpec,
                    query: Query::Generate { atoms }.to_string(),
                    cameras: Vec::new(),
                    scale_hint: None,
                };
                built = Some(SuiteTask::new(task_spec, scene, &format!("k{k}"), Some(k))?);
                break;
            }
            tasks.push(built.ok_or_else(|| SuiteError::Exhausted {
                suite: spec.name.clone(),
                index,
            })?);
            index += 1;
        }
    }
    Ok(tasks)
}
