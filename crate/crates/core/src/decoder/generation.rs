use std::collections::{BTreeMap, BTreeSet};

use crate::facts::{extract_facts, Axis, Fact, Quadrant};
use crate::workspace::{Payload, TaskInput, TokenGrid, Workspace};

use super::{token_centroids, Answer, AnswerPayload, DecoderConfig, Evidence};

/// Whether a token grid alone supports `atom`.
pub fn token_supports(tg: &TokenGrid, atom: &Fact, cfg: &DecoderConfig) -> bool {
    let cents = token_centroids(&tg.cells);
    let (w, h) = (tg.cells.width() as f64, tg.cells.height() as f64);
    match *atom {
        Fact::TotalCount { count } => cents.len() == count,
        Fact::InQuadrant { id, quadrant, view } if view == tg.view => cents
            .get(&id)
            .is_some_and(|&(u, v)| Quadrant::of_point(u, v, w, h) == quadrant),
        Fact::Spatial { a, relation, b, view } if view == tg.view => {
            let (Some(ca), Some(cb)) = (cents.get(&a), cents.get(&b)) else {
                return false;
            };
            let (va, vb) = match relation.axis() {
                Axis::Horizontal => (ca.0, cb.0),
                Axis::Vertical => (ca.1, cb.1),
            };
            if (va - vb).abs() < cfg.token_margin_cells {
                return false;
            }
            let [first, second] = relation.axis().choices();
            relation.axis().label(relation) == if va < vb { first } else { second }
        }
        Fact::InFront { front, back, view } | Fact::Occludes { front, back, view } if view == tg.view => {
            let mut buckets: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
            for t in tg.cells.cells().iter().filter(|t| t.id != 0) {
                let e = buckets.entry(t.id).or_insert((0.0, 0));
                e.0 += t.bucket as f64;
                e.1 += 1;
            }
            let mean = |id: u32| buckets.get(&id).map(|&(s, n)| s / n as f64);
            matches!((mean(front), mean(back)), (Some(f), Some(b)) if b - f >= 1.0)
        }
        _ => false,
    }
}

pub(super) fn decode(x: &TaskInput, w: &Workspace, cfg: &DecoderConfig, atoms: &[Fact]) -> (Answer, Evidence) {
    let mut ev = Evidence::default();
    let stated: Vec<BTreeSet<Fact>> = w
        .items()
        .iter()
        .map(|item| match item.payload() {
            Payload::Text(t) => extract_facts(t).into_iter().collect(),
            _ => BTreeSet::new(),
        })
        .collect();
    let mut flags = Vec::with_capacity(atoms.len());
    for atom in atoms {
        let mut support: Vec<usize> = (0..w.len()).filter(|&i| stated[i].contains(atom)).collect();
        if !matches!(atom, Fact::CategoryCount { .. }) {
            for (i, item) in w.items().iter().enumerate() {
                if let Payload::VisualTokens(tg) = item.payload() {
                    if token_supports(tg, atom, cfg) {
                        support.push(i);
                    }
                }
            }
        }
        let grounded = matches!(atom, Fact::Attribute { .. });
        for &i in &support {
            ev.cite(i, w.items()[i].hash(), atom.to_string());
        }
        if grounded && support.is_empty() {
            ev.note(format!("{atom}: grounded by the prompt"));
        }
        flags.push(grounded || !support.is_empty());
    }
    let confidence = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    (
        Answer {
            kind: x.kind(),
            payload: AnswerPayload::Atoms(flags),
            confidence,
        },
        ev,
    )
}
