use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::atomicity_buckets;
use super::{EvalError, SuiteKind, TaskRecord, MAX_ATOMS};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema_version: u32,
    pub suite: String,
    pub suite_kind: SuiteKind,
    pub suite_seed: u64,
    pub tasks: usize,
    pub policy_seed: u64,
    pub budget: u64,
    pub config_hash: String,
    /// Effective configuration the report was produced with.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub pipeline: String,
    pub tasks: usize,
    pub accuracy: Option<f64>,
    pub soft_tifa_gm: Option<f64>,
    /// k → fraction of tasks with every atom satisfied.
    pub atomicity: BTreeMap<usize, f64>,
    /// k → mean fraction of satisfied atoms per task.
    pub atomicity_mean_atom: BTreeMap<usize, f64>,
    pub abs_rel: Option<f64>,
    pub delta1: Option<f64>,
    pub rot_err_deg: Option<f64>,
    pub trans_err: Option<f64>,
    pub mean_cost: f64,
}

/// Sequential mean in record order, `None` when no record has the value.
fn mean_of(rs: &[&TaskRecord], f: impl Fn(&TaskRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
    if vals.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for v in &vals {
        s += v;
    }
    Some(s / vals.len() as f64)
}

fn satisfied_fraction(r: &TaskRecord) -> f64 {
    let hits = r.atom_scores.iter().filter(|&&s| s == 1.0).count();
    hits as f64 / r.atom_scores.len() as f64
}

impl PipelineRow {
    pub fn from_records(pipeline: &str, rs: &[&TaskRecord]) -> Self {
        let atom_results: Vec<(usize, bool)> = rs
            .iter()
            .filter_map(|r| Some((r.atom_count?, r.correct?)))
            .collect();
        let mut per_k: BTreeMap<usize, Vec<&TaskRecord>> = BTreeMap::new();
        for r in rs {
            if let (Some(k), false) = (r.atom_count, r.atom_scores.is_empty()) {
                per_k.entry(k).or_default().push(r);
            }
        }
        let atomicity_mean_atom = per_k
            .iter()
            .map(|(&k, v)| (k, mean_of(v, |r| Some(satisfied_fraction(r))).expect("bucket nonempty")))
            .collect();
        Self {
            pipeline: pipeline.to_string(),
            tasks: rs.len(),
            accuracy: mean_of(rs, |r| r.correct.map(|c| c as u8 as f64)),
            soft_tifa_gm: mean_of(rs, |r| r.soft_tifa_gm),
            atomicity: atomicity_buckets(&atom_results),
            atomicity_mean_atom,
            abs_rel: mean_of(rs, |r| r.abs_rel),
            delta1: mean_of(rs, |r| r.delta1),
            rot_err_deg: mean_of(rs, |r| r.rot_err_deg),
            trans_err: mean_of(rs, |r| r.trans_err),
            mean_cost: mean_of(rs, |r| Some(r.cost as f64)).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    pub rows: Vec<PipelineRow>,
    pub records: Vec<TaskRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn from_records(meta: ReportMeta, pipelines: &[String], records: Vec<TaskRecord>) -> Self {
        let rows = pipelines
            .iter()
            .map(|p| {
                let rs: Vec<&TaskRecord> = records.iter().filter(|r| &r.pipeline == p).collect();
                PipelineRow::from_records(p, &rs)
            })
            .collect();
        Self { meta, rows, records }
    }

    pub fn row(&self, pipeline: &str) -> Option<&PipelineRow> {
        self.rows.iter().find(|r| r.pipeline == pipeline)
    }

    pub fn pipelines(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.pipeline.clone()).collect()
    }

    /// Rows rebuilt from the stored records.
    pub fn recompute(&self) -> MetricReport {
        MetricReport::from_records(self.meta.clone(), &self.pipelines(), self.records.clone())
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = [
            "pipeline",
            "tasks",
            "accuracy",
            "soft_tifa_gm",
            "abs_rel",
            "delta1",
            "rot_err_deg",
            "trans_err",
            "mean_cost",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend((1..=MAX_ATOMS).map(|k| format!("atomicity_k{k}")));
        h.extend((1..=MAX_ATOMS).map(|k| format!("atomicity_mean_atom_k{k}")));
        h
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::csv_header()).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.pipeline.clone(),
                r.tasks.to_string(),
                cell(r.accuracy),
                cell(r.soft_tifa_gm),
                cell(r.abs_rel),
                cell(r.delta1),
                cell(r.rot_err_deg),
                cell(r.trans_err),
                r.mean_cost.to_string(),
            ];
            rec.extend((1..=MAX_ATOMS).map(|k| cell(r.atomicity.get(&k).copied())));
            rec.extend((1..=MAX_ATOMS).map(|k| cell(r.atomicity_mean_atom.get(&k).copied())));
            w.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::Output(e.to_string()))
    }

    /// Atomicity curves and per-metric bars.
    pub fn plot_data(&self) -> serde_json::Value {
        let mut curves = Vec::new();
        let mut bars = Vec::new();
        for r in &self.rows {
            for (k, v) in &r.atomicity {
                curves.push(json!({
                    "pipeline": r.pipeline,
                    "k": k,
                    "all_atoms": v,
                    "mean_atom": r.atomicity_mean_atom.get(k),
                }));
            }
            let metrics = [
                ("accuracy", r.accuracy),
                ("soft_tifa_gm", r.soft_tifa_gm),
                ("abs_rel", r.abs_rel),
                ("delta1", r.delta1),
                ("rot_err_deg", r.rot_err_deg),
                ("trans_err", r.trans_err),
                ("mean_cost", Some(r.mean_cost)),
            ];
            for (m, v) in metrics {
                if let Some(v) = v {
                    bars.push(json!({"pipeline": r.pipeline, "metric": m, "value": v}));
                }
            }
        }
        json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "suite": self.meta.suite,
            "atomicity": curves,
            "bars": bars,
        })
    }

    /// Writes `report.csv`, `report.json` and `plot_data.json` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), EvalError> {
        let out = |e: std::io::Error| EvalError::Output(e.to_string());
        std::fs::create_dir_all(dir).map_err(out)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()).map_err(out)?;
        std::fs::write(dir.join("report.json"), self.to_json()).map_err(out)?;
        let plot = serde_json::to_string_pretty(&self.plot_data()).expect("json");
        std::fs::write(dir.join("plot_data.json"), plot).map_err(out)?;
        Ok(())
    }
}
