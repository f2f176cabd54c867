use std::collections::{BTreeMap, BTreeSet};

use crate::facts::{extract_facts, Fact};
use crate::microworld::scene::Category;
use crate::workspace::{Payload, TaskInput, Workspace};

use super::{Answer, AnswerPayload, Evidence};

/// Category knowledge: from a render legend (`None`) or a text item.
type CategoryMap = BTreeMap<u32, (Category, Option<usize>)>;

pub(super) fn decode(x: &TaskInput, w: &Workspace, category: Option<Category>) -> (Answer, Evidence) {
    let mut known: CategoryMap = BTreeMap::new();
    for rv in &x.views {
        for a in &rv.legend {
            known.entry(a.id).or_insert((a.category, None));
        }
    }
    for item in w.items() {
        let legend = match item.payload() {
            Payload::SynthView(s) => &s.legend,
            Payload::RawView(v) => &v.legend,
            _ => continue,
        };
        for a in legend {
            known.entry(a.id).or_insert((a.category, None));
        }
    }
    let mut stated: Vec<Option<usize>> = vec![None; w.len()];
    let mut revealed: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); w.len()];
    for (i, item) in w.items().iter().enumerate() {
        match item.payload() {
            Payload::Text(t) => {
                for f in extract_facts(t) {
                    match f {
                        Fact::Attribute { id, category: c, .. } => {
                            known.entry(id).or_insert((c, Some(i)));
                            revealed[i].insert(id);
                        }
                        Fact::CategoryCount { category: c, count } if Some(c) == category => {
                            stated[i] = Some(stated[i].map_or(count, |s| s.max(count)));
                        }
                        Fact::TotalCount { count } if category.is_none() => {
                            stated[i] = Some(stated[i].map_or(count, |s| s.max(count)));
                        }
                        _ => {}
                    }
                }
            }
            Payload::VisualTokens(tg) => {
                revealed[i].extend(tg.cells.cells().iter().map(|t| t.id).filter(|&id| id != 0));
            }
            Payload::SynthView(s) => revealed[i].extend(s.legend.iter().map(|a| a.id)),
            Payload::RawView(v) => revealed[i].extend(v.legend.iter().map(|a| a.id)),
            _ => {}
        }
    }
    let matches = |id: u32| match category {
        None => true,
        Some(c) => known.get(&id).is_some_and(|k| k.0 == c),
    };
    let base: BTreeSet<u32> = x
        .views
        .iter()
        .flat_map(|rv| rv.legend.iter().map(|a| a.id))
        .filter(|&id| matches(id))
        .collect();

    let mut ev = Evidence::default();
    let mut all = base.clone();
    let mut best_stated = 0;
    for (i, item) in w.items().iter().enumerate() {
        let fresh: Vec<u32> = revealed[i]
            .iter()
            .copied()
            .filter(|&id| matches(id) && !base.contains(&id))
            .collect();
        if !fresh.is_empty() {
            ev.cite(i, item.hash(), format!("reveals {fresh:?}"));
            for &id in &fresh {
                if let Some(&(_, Some(t))) = known.get(&id) {
                    if category.is_some() && t != i {
                        ev.cite(t, w.items()[t].hash(), format!("category of {id}"));
                    }
                }
            }
            all.extend(fresh);
        }
        if let Some(n) = stated[i] {
            if n > base.len() {
                ev.cite(i, item.hash(), format!("states {n}"));
            }
            best_stated = best_stated.max(n);
        }
    }
    let count = all.len().max(best_stated);
    let k = 1 + ev.cited.len();
    (
        Answer {
            kind: x.kind(),
            payload: AnswerPayload::Count(count as u64),
            confidence: k as f64 / (k as f64 + 1.0),
        },
        ev,
    )
}
