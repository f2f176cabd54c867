use std::fmt::Write;

use unroll_core::decoder::{AnswerPayload, AnswerRecord};
use unroll_core::policy::Pipeline;
use unroll_core::workspace::{StepStatus, Trace};

pub fn answer_summary(a: &AnswerPayload) -> String {
    match a {
        AnswerPayload::Choice(c) => c.clone(),
        AnswerPayload::Count(n) => n.to_string(),
        AnswerPayload::Depth(d) => format!("depth map {}x{}", d.grid.width(), d.grid.height()),
        AnswerPayload::Atoms(flags) => {
            let bits: String = flags.iter().map(|&b| if b { '1' } else { '0' }).collect();
            format!("atoms {bits}")
        }
    }
}

fn status_str(s: &StepStatus) -> String {
    match s {
        StepStatus::Applied => "applied".into(),
        StepStatus::BudgetExceeded { needed, available } => format!("over budget ({needed} > {available})"),
        StepStatus::Failed(cause) => format!("failed: {cause}"),
    }
}

/// Step table with a running remaining-budget column, then the decoded answer.
pub fn render(trace: &Trace) -> String {
    let h = &trace.header;
    let pipeline = serde_json::from_str::<Pipeline>(&h.pipeline)
        .map(|p| p.name)
        .unwrap_or_else(|_| h.pipeline.clone());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "task {}  pipeline {}  budget {}  seed {}",
        h.task_id, pipeline, h.budget, h.policy_seed
    );
    if !trace.records.is_empty() {
        let _ = writeln!(out, "{:>4}  {:<24} {:>6} {:>9}  status", "step", "primitive", "cost", "remaining");
    }
    let mut remaining = h.budget;
    for r in &trace.records {
        let cost: u64 = r.items.iter().map(|i| i.cost()).sum();
        remaining = remaining.saturating_sub(cost);
        let name = if r.params.is_empty() {
            r.primitive_id.clone()
        } else {
            format!("{} {}", r.primitive_id, r.params)
        };
        let _ = writeln!(
            out,
            "{:>4}  {:<24} {:>6} {:>9}  {}",
            r.step_index,
            name,
            cost,
            remaining,
            status_str(&r.status)
        );
        for item in &r.items {
            let _ = writeln!(out, "        {:>5}  {}", item.cost(), item.payload().summary());
        }
    }
    match serde_json::from_str::<AnswerRecord>(&trace.answer_json) {
        Ok(rec) => {
            let cited: Vec<String> = rec
                .evidence
                .cited
                .iter()
                .map(|c| format!("#{} {} {}", c.index, c.item_hash.short(), c.note))
                .collect();
            let mut line = format!(
                "answer {} confidence {:.3}",
                answer_summary(&rec.answer.payload),
                rec.answer.confidence
            );
            if !cited.is_empty() {
                let _ = write!(line, "  evidence [{}]", cited.join("; "));
            }
            if !rec.evidence.notes.is_empty() {
                let _ = write!(line, "  notes [{}]", rec.evidence.notes.join("; "));
            }
            let _ = writeln!(out, "{line}");
        }
        Err(e) => {
            let _ = writeln!(out, "answer unreadable: {e}");
        }
    }
    out
}
