use std::collections::BTreeMap;

use crate::facts::{extract_facts, Axis, Fact};
use crate::microworld::geometry::Vec3;
use crate::microworld::render::Intrinsics;
use crate::workspace::{Payload, TaskInput, Workspace};

use super::estimate::{estimate_center, object_points, FrameGraph};
use super::{token_centroids, Answer, AnswerPayload, DecoderConfig, Evidence};

/// Position estimates from one source, all in one view frame.
struct Source {
    frame: u32,
    weight: f64,
    /// Workspace item index; `None` for a raw task view.
    item: Option<usize>,
    positions: BTreeMap<u32, Vec3>,
}

struct Vote {
    label: &'static str,
    weight: f64,
    cites: Vec<(usize, String)>,
}

fn centers(points: BTreeMap<u32, Vec<Vec3>>) -> BTreeMap<u32, Vec3> {
    points
        .into_iter()
        .filter_map(|(id, pts)| Some((id, estimate_center(&pts)?)))
        .collect()
}

fn sources(x: &TaskInput, w: &Workspace, cfg: &DecoderConfig) -> Vec<Source> {
    let mut out = Vec::new();
    for rv in &x.views {
        if let Some(depth) = &rv.depth {
            out.push(Source {
                frame: rv.index,
                weight: cfg.weights.raw,
                item: None,
                positions: centers(object_points(&rv.ids, depth, |_, _| true, &rv.intrinsics)),
            });
        }
    }
    for (i, item) in w.items().iter().enumerate() {
        let src = match item.payload() {
            Payload::Depth(d) => {
                let Some(rv) = x.view(d.view) else { continue };
                if !rv.ids.same_shape(&d.map.grid) {
                    continue;
                }
                let pts = object_points(&rv.ids, &d.map.grid, |r, c| *d.map.valid.get(r, c), &rv.intrinsics);
                Source {
                    frame: d.view,
                    weight: cfg.weights.depth,
                    item: Some(i),
                    positions: centers(pts),
                }
            }
            Payload::SynthView(s) => {
                let offset = s.motion.camera_offset(s.step);
                let pts = object_points(&s.render.ids, &s.render.depth, |_, _| true, &s.intrinsics());
                Source {
                    frame: s.source_view,
                    weight: cfg.weights.synth_view,
                    item: Some(i),
                    positions: centers(pts).into_iter().map(|(id, p)| (id, p + offset)).collect(),
                }
            }
            Payload::RawView(v) => {
                let intr = Intrinsics::new(v.render.width(), v.render.height(), v.fov_deg);
                Source {
                    frame: v.view,
                    weight: cfg.weights.raw,
                    item: Some(i),
                    positions: centers(object_points(&v.render.ids, &v.render.depth, |_, _| true, &intr)),
                }
            }
            _ => continue,
        };
        out.push(src);
    }
    out
}

fn relation(pa: &Vec3, pb: &Vec3, axis: Axis) -> Option<&'static str> {
    if pa.z <= 0.0 || pb.z <= 0.0 {
        return None;
    }
    let (va, vb) = match axis {
        Axis::Horizontal => (pa.x / pa.z, pb.x / pb.z),
        Axis::Vertical => (pa.y / pa.z, pb.y / pb.z),
    };
    let [first, second] = axis.choices();
    if va < vb {
        Some(first)
    } else if va > vb {
        Some(second)
    } else {
        None
    }
}

pub(super) fn decode(
    x: &TaskInput,
    w: &Workspace,
    cfg: &DecoderConfig,
    view: u32,
    a: u32,
    b: u32,
    axis: Axis,
) -> (Answer, Evidence) {
    let graph = FrameGraph::from_workspace(w);
    let srcs = sources(x, w, cfg);
    let hash = |i: usize| w.items()[i].hash();
    let mut votes: Vec<Vote> = Vec::new();

    let to_view = |frame: u32| graph.path(frame, view);
    let source_cites = |s: &Source, poses: &[usize]| {
        let mut c: Vec<(usize, String)> = Vec::new();
        if let Some(i) = s.item {
            c.push((i, format!("positions of {a} and {b}")));
        }
        c.extend(poses.iter().map(|&p| (p, format!("frame {} to view {view}", s.frame))));
        c
    };

    for s in &srcs {
        let (Some(pa), Some(pb)) = (s.positions.get(&a), s.positions.get(&b)) else {
            continue;
        };
        let Some((t, poses)) = to_view(s.frame) else { continue };
        let (pa, pb) = (t.camera_to_world(pa), t.camera_to_world(pb));
        let Some(label) = relation(&pa, &pb, axis) else { continue };
        let weight = if poses.is_empty() {
            s.weight
        } else {
            s.weight.max(cfg.weights.pose)
        };
        votes.push(Vote {
            label,
            weight,
            cites: source_cites(s, &poses),
        });
    }

    for (i, item) in w.items().iter().enumerate() {
        match item.payload() {
            Payload::Text(t) => {
                for f in extract_facts(t) {
                    let Fact::Spatial { a: fa, relation: rel, b: fb, view: fv } = f else {
                        continue;
                    };
                    if fv != view || rel.axis() != axis {
                        continue;
                    }
                    let rel = if (fa, fb) == (a, b) {
                        rel
                    } else if (fa, fb) == (b, a) {
                        rel.inverse()
                    } else {
                        continue;
                    };
                    votes.push(Vote {
                        label: axis.label(rel),
                        weight: cfg.weights.text,
                        cites: vec![(i, f.to_string())],
                    });
                }
            }
            Payload::VisualTokens(tg) if tg.view == view => {
                let cents = token_centroids(&tg.cells);
                let (Some(ca), Some(cb)) = (cents.get(&a), cents.get(&b)) else { continue };
                let (va, vb) = match axis {
                    Axis::Horizontal => (ca.0, cb.0),
                    Axis::Vertical => (ca.1, cb.1),
                };
                if (va - vb).abs() < cfg.token_margin_cells {
                    continue;
                }
                let [first, second] = axis.choices();
                votes.push(Vote {
                    label: if va < vb { first } else { second },
                    weight: cfg.weights.visual_tokens,
                    cites: vec![(i, format!("token centroids of {a} and {b}"))],
                });
            }
            _ => {}
        }
    }

    let mut notes = Vec::new();
    if votes.is_empty() {
        // No single source sees both objects: pair the best estimate of each.
        let best = |id: u32| {
            let mut found: Option<(&Source, Vec3, Vec<usize>)> = None;
            for s in srcs.iter().filter(|s| s.positions.contains_key(&id)) {
                let Some((t, poses)) = to_view(s.frame) else { continue };
                if found.as_ref().is_none_or(|f| s.weight > f.0.weight) {
                    found = Some((s, t.camera_to_world(&s.positions[&id]), poses));
                }
            }
            found
        };
        if let (Some((sa, pa, qa)), Some((sb, pb, qb))) = (best(a), best(b)) {
            if let Some(label) = relation(&pa, &pb, axis) {
                let mut cites = Vec::new();
                if let Some(i) = sa.item {
                    cites.push((i, format!("position of {a}")));
                }
                if let Some(i) = sb.item {
                    cites.push((i, format!("position of {b}")));
                }
                for p in qa.iter() {
                    cites.push((*p, format!("frame {} to view {view}", sa.frame)));
                }
                for p in qb.iter() {
                    cites.push((*p, format!("frame {} to view {view}", sb.frame)));
                }
                votes.push(Vote {
                    label,
                    weight: sa.weight.min(sb.weight),
                    cites,
                });
                notes.push("fused estimates from different sources".to_string());
            }
        }
    }

    let [first, second] = axis.choices();
    let tally = |l: &str| votes.iter().filter(|v| v.label == l).map(|v| v.weight).sum::<f64>();
    let (wf, ws) = (tally(first), tally(second));
    let total = wf + ws;
    let mut ev = Evidence::default();
    for n in notes {
        ev.note(n);
    }
    let (label, confidence) = if wf == ws {
        ev.note(if total == 0.0 {
            "no evidence; abstain default"
        } else {
            "tied vote; abstain default"
        });
        (first, 0.0)
    } else if wf > ws {
        (first, wf / (total + 1.0))
    } else {
        (second, ws / (total + 1.0))
    };
    for v in &votes {
        for (i, note) in &v.cites {
            ev.cite(*i, hash(*i), note.clone());
        }
    }
    (
        Answer {
            kind: x.kind(),
            payload: AnswerPayload::Choice(label.to_string()),
            confidence,
        },
        ev,
    )
}
