//! Oracle-backed built-in primitives. None of them read the workspace.

use std::collections::BTreeSet;

use crate::facts::{render_facts, Fact, Query};
use crate::grid::Grid;
use crate::microworld::geometry::{apply_canonical_motion, relative_pose, CameraPose, PoseRecord, DEFAULT_MOTION_STEP};
use crate::microworld::render::{render_depth, render_view, render_view_sized};
use crate::microworld::scene::Scene;
use crate::workspace::{
    legend_for, DepthPayload, Modality, Payload, PosePayload, SynthViewPayload, TaskInput, Token,
    TokenGrid, DEPTH_BUCKETS,
};

use super::describe::{
    attribute_facts, count_facts, depth_order_facts, layout_facts, occlusion_facts,
    relation_facts,
};
use super::noise::{dropped, normal, perturb_pose, rng};
use super::{Call, NoiseSpec, PrimitiveDescriptor, Registry};

pub const SHORT_THINK_CAP: usize = 105;
pub const LONG_THINK_CAP: usize = 255;
pub const TOKEN_GRID_SIZE: usize = 16;
/// Token cells are computed from a render this many times finer per axis.
pub const TOKEN_SUPERSAMPLE: usize = 4;
pub const DEPTH_BUCKET_METERS: f64 = 1.0;

pub const BUILTIN_IDS: [&str; 8] = [
    "text_think_short",
    "text_think_long",
    "depth_caption",
    "generic_caption",
    "estimate_pose",
    "estimate_depth",
    "synthesize_view",
    "rollout_visual_tokens",
];

/// The task's views with their cameras, or the overview camera as view 1
/// when the task has none.
fn views_of(task: &TaskInput, scene: &Scene) -> Vec<(u32, CameraPose)> {
    if task.spec.cameras.is_empty() {
        return vec![(1, scene.canonical_camera())];
    }
    task.spec
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| (i as u32 + 1, *c))
        .collect()
}

fn query_view(task: &TaskInput) -> u32 {
    match task.query {
        Query::Spatial { view, .. } | Query::Depth { view } => view,
        _ => 1,
    }
}

/// Ids visible in view `v`, or every object when the task has no views.
fn visible_in(task: &TaskInput, scene: &Scene, v: u32) -> Vec<u32> {
    if task.views.is_empty() {
        return scene.objects().iter().map(|o| o.id).collect();
    }
    task.view(v).map(|rv| rv.legend.iter().map(|a| a.id).collect()).unwrap_or_default()
}

fn visible_anywhere(task: &TaskInput, scene: &Scene) -> Vec<u32> {
    if task.views.is_empty() {
        return scene.objects().iter().map(|o| o.id).collect();
    }
    let set: BTreeSet<u32> = task
        .views
        .iter()
        .flat_map(|v| v.legend.iter().map(|a| a.id))
        .collect();
    set.into_iter().collect()
}

fn truncate(facts: Vec<Fact>, cap: usize) -> Vec<Fact> {
    let mut used = 0;
    facts
        .into_iter()
        .take_while(|f| {
            used += f.token_count();
            used <= cap
        })
        .collect()
}

fn drop_facts(facts: Vec<Fact>, noise: &NoiseSpec, seed: u64) -> Vec<Fact> {
    let p = noise.drop_prob();
    if p == 0.0 {
        return facts;
    }
    let mut r = rng(seed);
    facts.into_iter().filter(|_| !dropped(&mut r, p)).collect()
}

fn text_item(facts: Vec<Fact>, call: &Call<'_>) -> Vec<Payload> {
    let facts = drop_facts(facts, call.noise, call.seed);
    vec![Payload::Text(render_facts(None, &facts))]
}

/// Counts, attributes, optional quadrant layouts, then pairwise relations per
/// view, cut at `cap` tokens. Long mode moves the first relation to the front.
pub(crate) fn think_facts(task: &TaskInput, scene: &Scene, cap: usize, long: bool) -> Vec<Fact> {
    let described = visible_anywhere(task, scene);
    let views = views_of(task, scene);
    let mut facts = count_facts(scene, &described);
    facts.extend(attribute_facts(scene, &described));
    if long {
        for (v, cam) in &views {
            facts.extend(layout_facts(scene, cam, *v, &visible_in(task, scene, *v)));
        }
    }
    let mut relations = Vec::new();
    for (v, cam) in &views {
        relations.extend(relation_facts(scene, cam, *v, &visible_in(task, scene, *v)));
    }
    if long && !relations.is_empty() {
        // Keep one relation ahead of the cut so both paragraphs are present.
        facts.insert(0, relations.remove(0));
    }
    facts.extend(relations);
    truncate(facts, cap)
}

/// Long thinking splits into a scene paragraph and a relations paragraph.
fn think(call: &Call<'_>, cap: usize, long: bool) -> Result<Vec<Payload>, String> {
    let cap = call.params.usize_or("cap", cap)?;
    let facts = think_facts(call.task, call.scene, cap, long);
    if !long {
        return Ok(text_item(facts, call));
    }
    let (relations, scene): (Vec<Fact>, Vec<Fact>) =
        facts.into_iter().partition(|f| matches!(f, Fact::Spatial { .. }));
    let mut out = Vec::new();
    for part in [scene, relations] {
        if !part.is_empty() {
            out.extend(text_item(part, call));
        }
    }
    Ok(out)
}

fn view_camera(task: &TaskInput, scene: &Scene, v: u32) -> Result<CameraPose, String> {
    views_of(task, scene)
        .into_iter()
        .find(|(i, _)| *i == v)
        .map(|(_, c)| c)
        .ok_or_else(|| format!("task has no view {v}"))
}

fn view_ids(task: &TaskInput, scene: &Scene, v: u32, cam: &CameraPose) -> Grid<u32> {
    match task.view(v) {
        Some(rv) => rv.ids.clone(),
        None => render_view(scene, cam).ids,
    }
}

pub(crate) fn depth_caption_facts(task: &TaskInput, scene: &Scene) -> Result<Vec<Fact>, String> {
    let v = query_view(task);
    let cam = view_camera(task, scene, v)?;
    let ids = view_ids(task, scene, v, &cam);
    let visible: Vec<u32> = {
        let s: BTreeSet<u32> = ids.cells().iter().copied().filter(|&i| i != 0).collect();
        s.into_iter().collect()
    };
    let mut facts = depth_order_facts(scene, &cam, v, &visible);
    facts.extend(occlusion_facts(scene, &cam, v, &ids));
    Ok(facts)
}

fn depth_caption(call: &Call<'_>) -> Result<Vec<Payload>, String> {
    Ok(text_item(depth_caption_facts(call.task, call.scene)?, call))
}

pub(crate) fn generic_caption_facts(task: &TaskInput, scene: &Scene) -> Result<Vec<Fact>, String> {
    let v = query_view(task);
    let cam = view_camera(task, scene, v)?;
    let visible = visible_in(task, scene, v);
    let mut facts = count_facts(scene, &visible);
    facts.extend(attribute_facts(scene, &visible));
    facts.extend(layout_facts(scene, &cam, v, &visible));
    Ok(facts)
}

fn generic_caption(call: &Call<'_>) -> Result<Vec<Payload>, String> {
    Ok(text_item(generic_caption_facts(call.task, call.scene)?, call))
}

/// Pose of every other view in view 1's frame.
fn estimate_pose(call: &Call<'_>) -> Result<Vec<Payload>, String> {
    let cams = &call.task.spec.cameras;
    let mut r = rng(call.seed);
    let mut out = Vec::new();
    for (k, cam) in cams.iter().enumerate().skip(1) {
        let rel = relative_pose(&cams[0], cam);
        let noisy = perturb_pose(&rel, call.noise.sigma(), &mut r);
        if dropped(&mut r, call.noise.drop_prob()) {
            continue;
        }
        out.push(Payload::Pose(PosePayload {
            from_view: 1,
            to_view: k as u32 + 1,
            record: PoseRecord::from_pose(&noisy).to_string(),
        }));
    }
    Ok(out)
}

fn estimate_depth(call: &Call<'_>) -> Result<Vec<Payload>, String> {
    let v = query_view(call.task);
    let cam = view_camera(call.task, call.scene, v)?;
    let mut map = render_depth(call.scene, &cam);
    let (sigma, p) = (call.noise.sigma(), call.noise.drop_prob());
    let mut r = rng(call.seed);
    for (d, valid) in map.grid.cells_mut().iter_mut().zip(map.valid.cells_mut()) {
        if !*valid {
            continue;
        }
        if dropped(&mut r, p) {
            *valid = false;
            *d = 0.0;
            continue;
        }
        *d = (*d + normal(&mut r, sigma)).max(1e-3);
    }
    Ok(vec![Payload::Depth(DepthPayload { view: v, map })])
}

fn synthesize_view(call: &Call<'_>) -> Result<Vec<Payload>, String> {
    let motion = call.params.motion()?;
    let step = call.params.f64_or("step", DEFAULT_MOTION_STEP)?;
    let mut r = rng(call.seed);
    let mut out = Vec::new();
    for (v, cam) in views_of(call.task, call.scene) {
        let moved = apply_canonical_motion(&cam, motion, step).map_err(|e| e.to_string())?;
        let moved = perturb_pose(&moved, call.noise.sigma(), &mut r);
        let mut render = render_view(call.scene, &moved);
        let p = call.noise.drop_prob();
        for (id, d) in render.ids.cells_mut().iter_mut().zip(render.depth.cells_mut()) {
            if *id != 0 && dropped(&mut r, p) {
                *id = 0;
                *d = 0.0;
            }
        }
        out.push(Payload::SynthView(SynthViewPayload {
            source_view: v,
            motion,
            step,
            fov_deg: cam.fov_deg(),
            legend: legend_for(call.scene, &render.ids),
            render,
        }));
    }
    Ok(out)
}

/// `g × g` tokens over `cam`: each cell takes the most frequent nonzero id
/// among its supersampled pixels (ties to the nearer, then lower id) and the
/// 1 m bucket of that object's mean depth in the cell.
pub fn token_grid(scene: &Scene, cam: &CameraPose, g: usize) -> Grid<Token> {
    let s = TOKEN_SUPERSAMPLE;
    let fine = render_view_sized(scene, cam, g * s, g * s);
    Grid::from_fn(g, g, |row, col| {
        // (id, count, depth sum)
        let mut tally: Vec<(u32, usize, f64)> = Vec::new();
        for r in row * s..(row + 1) * s {
            for c in col * s..(col + 1) * s {
                let id = *fine.ids.get(r, c);
                if id == 0 {
                    continue;
                }
                let d = *fine.depth.get(r, c);
                match tally.iter_mut().find(|t| t.0 == id) {
                    Some(t) => {
                        t.1 += 1;
                        t.2 += d;
                    }
                    None => tally.push((id, 1, d)),
                }
            }
        }
        let best = tally.into_iter().min_by(|a, b| {
            b.1.cmp(&a.1)
                .then((a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)))
                .then(a.0.cmp(&b.0))
        });
        match best {
            None => Token { id: 0, bucket: 0 },
            Some((id, n, sum)) => Token {
                id,
                bucket: depth_bucket(sum / n as f64),
            },
        }
    })
}

pub(crate) fn depth_bucket(depth: f64) -> u8 {
    ((depth / DEPTH_BUCKET_METERS).floor().max(0.0) as u64).min(DEPTH_BUCKETS as u64 - 1) as u8
}

fn rollout_visual_tokens(call: &Call<'_>) -> Result<Vec<Payload>, String> {
    let g = call.params.usize_or("grid", TOKEN_GRID_SIZE)?;
    if g == 0 || g > 64 {
        return Err(format!("grid size {g} outside 1..=64"));
    }
    let cam = call.task.principal_camera(call.scene);
    let mut cells = token_grid(call.scene, &cam, g);
    let (sigma, p) = (call.noise.sigma(), call.noise.drop_prob());
    let mut r = rng(call.seed);
    for t in cells.cells_mut() {
        if t.id == 0 {
            continue;
        }
        if dropped(&mut r, p) {
            *t = Token { id: 0, bucket: 0 };
            continue;
        }
        if sigma > 0.0 {
            let shifted = t.bucket as f64 + normal(&mut r, sigma).round();
            t.bucket = shifted.clamp(0.0, DEPTH_BUCKETS as f64 - 1.0) as u8;
        }
    }
    Ok(vec![Payload::VisualTokens(TokenGrid { view: 1, cells })])
}

fn descriptor(id: &str, produces: Modality, expected_cost: u64) -> PrimitiveDescriptor {
    PrimitiveDescriptor {
        id: id.to_string(),
        produces,
        expected_cost,
        noise: NoiseSpec::none(),
    }
}

/// Registry holding the eight built-in primitives, all noise-free.
pub fn builtin_registry() -> Registry {
    let reg = Registry::new();
    let build = || -> Result<Registry, super::PrimitiveError> {
        reg.register(descriptor("text_think_short", Modality::Text, 100), |c: &Call<'_>| {
            think(c, SHORT_THINK_CAP, false)
        })?
        .register(descriptor("text_think_long", Modality::Text, 250), |c: &Call<'_>| {
            think(c, LONG_THINK_CAP, true)
        })?
        .register(descriptor("depth_caption", Modality::Text, 40), depth_caption)?
        .register(descriptor("generic_caption", Modality::Text, 60), generic_caption)?
        .register(descriptor("estimate_pose", Modality::Pose, 12), estimate_pose)?
        .register(descriptor("estimate_depth", Modality::Depth, 256), estimate_depth)?
        .register(descriptor("synthesize_view", Modality::SynthView, 256), synthesize_view)?
        .register(
            descriptor("rollout_visual_tokens", Modality::VisualTokens, 256),
            rollout_visual_tokens,
        )
    };
    build().expect("built-in ids are distinct")
}
