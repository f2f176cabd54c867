//! Task suites, metrics, and ablation reports.

mod calibration;
mod metrics;
mod report;
mod suites;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decoder::{AnswerPayload, DecoderConfig};
use crate::facts::{Fact, Query};
use crate::microworld::geometry::relative_pose;
use crate::policy::{Engine, Pipeline, PolicyConfig, PolicyError, Unroll};
use crate::primitives::{builtin_registry, NoiseSpec, PrimitiveError, Registry};
use crate::workspace::{Payload, TaskKind};

pub use calibration::{calibration_corpus, pose_noise_calibration, think_cost_calibration, NoiseCalibration, ThinkCosts};
pub use metrics::{
    atomicity_buckets, depth_metrics, pose_metrics, soft_tifa_gm, DepthErrors, MetricError, PoseErrors,
    DELTA1_THRESHOLD, DIRECTION_EPS,
};
pub use report::{MetricReport, PipelineRow, ReportMeta, REPORT_SCHEMA_VERSION};
pub use suites::{SuiteError, SuiteKind, SuiteSpec, SuiteTask, TaskSuite, MAX_ATOMS, MIN_VISIBLE_PIXELS, RELATION_MARGIN};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("report output: {0}")]
    Output(String),
}

/// Score credited to an unsatisfied atom: the chance of guessing it.
pub fn chance_score(atom: &Fact) -> f64 {
    match atom {
        Fact::Attribute { .. } => 0.125,
        Fact::CategoryCount { .. } | Fact::TotalCount { .. } => 0.25,
        Fact::InQuadrant { .. } => 0.25,
        Fact::Spatial { .. } | Fact::InFront { .. } | Fact::Occludes { .. } => 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    /// Noise per primitive id; unlisted primitives stay noiseless.
    #[serde(default)]
    pub noise: BTreeMap<String, NoiseSpec>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            decoder: DecoderConfig::default(),
            noise: BTreeMap::new(),
        }
    }
}

impl AblationConfig {
    pub fn engine(&self) -> Result<Engine, EvalError> {
        let mut reg: Registry = builtin_registry();
        for (id, n) in &self.noise {
            reg = reg.with_noise(id, n.clone())?;
        }
        Ok(Engine::new(reg).with_decoder(self.decoder.clone()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Per-task, per-pipeline outcome; every report aggregate derives from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub pipeline: String,
    pub kind: TaskKind,
    pub tag: String,
    pub answer: AnswerPayload,
    pub confidence: f64,
    /// Workspace tokens spent.
    pub cost: u64,
    pub steps_skipped: usize,
    pub final_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atom_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_tifa_gm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    /// Mean over the pose items in the workspace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rot_err_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trans_err: Option<f64>,
}

pub fn score_task(t: &SuiteTask, pipeline: &str, run: &Unroll) -> Result<TaskRecord, EvalError> {
    let x = t.input();
    let ans = &run.answer;
    let mut rec = TaskRecord {
        task_id: t.spec.id.clone(),
        pipeline: pipeline.to_string(),
        kind: t.spec.kind,
        tag: t.tag.clone(),
        answer: ans.payload.clone(),
        confidence: ans.confidence,
        cost: run.workspace.spent(),
        steps_skipped: run.skipped_steps(),
        final_hash: run.trace.final_hash().to_hex(),
        correct: None,
        atom_count: t.atom_count,
        atom_scores: Vec::new(),
        soft_tifa_gm: None,
        abs_rel: None,
        delta1: None,
        rot_err_deg: None,
        trans_err: None,
    };
    match (&x.query, &ans.payload, &t.oracle.payload) {
        (Query::Generate { atoms }, AnswerPayload::Atoms(got), AnswerPayload::Atoms(want)) => {
            let scores: Vec<f64> = atoms
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    if got.get(i) == want.get(i) {
                        1.0
                    } else {
                        chance_score(a)
                    }
                })
                .collect();
            rec.soft_tifa_gm = Some(soft_tifa_gm(&scores)?);
            rec.correct = Some(got == want);
            rec.atom_scores = scores;
        }
        (_, AnswerPayload::Depth(pred), AnswerPayload::Depth(gt)) => {
            let e = depth_metrics(pred, gt)?;
            rec.abs_rel = Some(e.abs_rel);
            rec.delta1 = Some(e.delta1);
        }
        (_, got, want) => rec.correct = Some(got == want),
    }
    let mut pose_errs = Vec::new();
    for item in run.workspace.items() {
        let Payload::Pose(p) = item.payload() else { continue };
        let cams = &t.spec.cameras;
        let (Some(a), Some(b)) = (
            cams.get(p.from_view as usize - 1),
            cams.get(p.to_view as usize - 1),
        ) else {
            continue;
        };
        let Some(pred) = p.parsed().ok().and_then(|r| r.to_pose(b.fov_deg()).ok()) else {
            continue;
        };
        pose_errs.push(pose_metrics(&pred, &relative_pose(a, b)));
    }
    if !pose_errs.is_empty() {
        let n = pose_errs.len() as f64;
        rec.rot_err_deg = Some(pose_errs.iter().map(|e| e.rot_err_deg).sum::<f64>() / n);
        rec.trans_err = Some(pose_errs.iter().map(|e| e.trans_err).sum::<f64>() / n);
    }
    Ok(rec)
}

/// Runs every pipeline on every task in parallel; records come back in
/// (pipeline, task) order regardless of scheduling.
pub fn run_records(
    suite: &TaskSuite,
    pipelines: &[Pipeline],
    cfg: &AblationConfig,
) -> Result<Vec<TaskRecord>, EvalError> {
    run_records_with(&cfg.engine()?, suite, pipelines, &cfg.policy)
}

/// As [`run_records`] with a caller-built engine, e.g. one with remote
/// primitives registered.
pub fn run_records_with(
    engine: &Engine,
    suite: &TaskSuite,
    pipelines: &[Pipeline],
    policy: &PolicyConfig,
) -> Result<Vec<TaskRecord>, EvalError> {
    for p in pipelines {
        p.validate(&engine.registry)?;
    }
    let jobs: Vec<(&Pipeline, &SuiteTask)> = pipelines
        .iter()
        .flat_map(|p| suite.tasks.iter().map(move |t| (p, t)))
        .collect();
    jobs.par_iter()
        .map(|(p, t)| {
            let run = engine.run_unroll(&t.input(), &t.scene, p, policy)?;
            score_task(t, &p.name, &run)
        })
        .collect()
}

pub fn run_ablation(
    suite: &TaskSuite,
    pipelines: &[Pipeline],
    cfg: &AblationConfig,
) -> Result<MetricReport, EvalError> {
    run_ablation_with(&cfg.engine()?, suite, pipelines, cfg)
}

pub fn run_ablation_with(
    engine: &Engine,
    suite: &TaskSuite,
    pipelines: &[Pipeline],
    cfg: &AblationConfig,
) -> Result<MetricReport, EvalError> {
    let records = run_records_with(engine, suite, pipelines, &cfg.policy)?;
    let names: Vec<String> = pipelines.iter().map(|p| p.name.clone()).collect();
    let meta = ReportMeta {
        schema_version: REPORT_SCHEMA_VERSION,
        suite: suite.name.clone(),
        suite_kind: suite.kind,
        suite_seed: suite.seed,
        tasks: suite.len(),
        policy_seed: cfg.policy.rng_seed,
        budget: cfg.policy.budget,
        config_hash: cfg.hash(),
        config: serde_json::to_value(cfg).expect("config serializes"),
    };
    Ok(MetricReport::from_records(meta, &names, records))
}
