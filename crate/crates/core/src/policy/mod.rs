//! Executes unroll pipelines under a budget and records traces.

mod config;
mod pipeline;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{self, Answer, AnswerRecord, DecoderConfig, Evidence};
use crate::microworld::scene::Scene;
use crate::primitives::{
    builtin_registry, invocation_seed, InvokeContext, PrimitiveError, Registry,
};
use crate::workspace::{
    hash_state, InvocationRecord, Origin, StepStatus, TaskInput, TaskSpec, Trace, TraceHeader,
    Workspace, WorkspaceError,
};

pub use config::{BudgetPolicy, PolicyConfig, PolicyFile, CONFIG_VERSION, DEFAULT_BUDGET};
pub use pipeline::{Pipeline, Step, DEPTH_PIPELINE_NAMES, PRESET_NAMES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("pipeline {pipeline:?} uses unregistered primitive {primitive:?}")]
    UnknownPrimitive { pipeline: String, primitive: String },
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("registry inconsistency: {0}")]
    Registry(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("re-execution diverged from the trace: {0}")]
    ReplayMismatch(String),
}

/// Result of one unroll session.
#[derive(Debug, Clone)]
pub struct Unroll {
    pub answer: Answer,
    pub evidence: Evidence,
    pub workspace: Workspace,
    pub trace: Trace,
}

impl Unroll {
    pub fn skipped_steps(&self) -> usize {
        self.trace.records.iter().filter(|r| !r.status.is_applied()).count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    policy: PolicyConfig,
    decoder: DecoderConfig,
}

/// Chooses a pipeline per task before execution.
pub trait AdaptivePlanner: Send + Sync {
    fn plan(&self, x: &TaskInput, scene: &Scene, cfg: &PolicyConfig) -> Pipeline;
}

/// Always answers directly.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectPlanner;

impl AdaptivePlanner for DirectPlanner {
    fn plan(&self, _x: &TaskInput, _scene: &Scene, _cfg: &PolicyConfig) -> Pipeline {
        Pipeline::direct()
    }
}

pub fn plan_adaptive(x: &TaskInput, scene: &Scene, cfg: &PolicyConfig) -> Pipeline {
    DirectPlanner.plan(x, scene, cfg)
}

/// Primitive registry plus decoder settings.
#[derive(Debug, Clone)]
pub struct Engine {
    pub registry: Registry,
    pub decoder: DecoderConfig,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(builtin_registry())
    }
}

impl Engine {
    pub fn new(registry: Registry) -> Self {
        Self {
            registry,
            decoder: DecoderConfig::default(),
        }
    }

    pub fn with_decoder(mut self, decoder: DecoderConfig) -> Self {
        self.decoder = decoder;
        self
    }

    pub fn run_unroll(
        &self,
        x: &TaskInput,
        scene: &Scene,
        p: &Pipeline,
        cfg: &PolicyConfig,
    ) -> Result<Unroll, PolicyError> {
        cfg.validate()?;
        p.validate(&self.registry)?;
        let mut ws = Workspace::new(cfg.budget)?;
        let mut records = Vec::with_capacity(p.horizon());
        for (i, st) in p.steps.iter().enumerate() {
            let step_index = i as u32 + 1;
            let ictx = InvokeContext {
                step_index,
                session_seed: cfg.rng_seed,
            };
            let skipped = |status: StepStatus, ws: &Workspace| -> Result<InvocationRecord, PolicyError> {
                let desc = self
                    .registry
                    .descriptor(&st.primitive)
                    .ok_or_else(|| PolicyError::Registry(st.primitive.clone()))?;
                let h = hash_state(ws);
                Ok(InvocationRecord {
                    primitive_id: st.primitive.clone(),
                    params: st.params.to_string(),
                    step_index,
                    seed: invocation_seed(&desc.noise, cfg.rng_seed, x.id(), step_index),
                    inputs_hash: h,
                    items: Vec::new(),
                    item_hashes: Vec::new(),
                    result_hash: h,
                    elapsed: Duration::ZERO,
                    status,
                    origin: self.registry.origin(&st.primitive).unwrap_or(Origin::Local),
                })
            };
            match self.registry.invoke(&st.primitive, x, &ws, scene, &st.params, ictx) {
                Ok((items, record)) => {
                    ws = ws.compose(&items)?;
                    debug_assert_eq!(hash_state(&ws), record.result_hash);
                    records.push(record);
                }
                Err(PrimitiveError::BudgetExceeded { needed, available }) => {
                    records.push(skipped(StepStatus::BudgetExceeded { needed, available }, &ws)?);
                    if cfg.on_budget_exceeded == BudgetPolicy::StopAndDecode {
                        break;
                    }
                }
                Err(PrimitiveError::PrimitiveFailed(_, cause)) => {
                    records.push(skipped(StepStatus::Failed(cause), &ws)?);
                }
                Err(e) => return Err(PolicyError::Registry(e.to_string())),
            }
        }
        let (answer, evidence) = decoder::decode(x, &ws, &self.decoder);
        let record = AnswerRecord {
            task_id: x.id().to_string(),
            answer: answer.clone(),
            evidence: evidence.clone(),
        };
        let run_cfg = RunConfig {
            policy: cfg.clone(),
            decoder: self.decoder.clone(),
        };
        let trace = Trace {
            header: TraceHeader {
                task_id: x.id().to_string(),
                task_json: serde_json::to_string(&x.spec).expect("task serializes"),
                scene_json: scene.to_json(),
                pipeline: serde_json::to_string(p).expect("pipeline serializes"),
                budget: cfg.budget,
                policy_seed: cfg.rng_seed,
                config_json: serde_json::to_string(&run_cfg).expect("config serializes"),
            },
            records,
            answer_json: serde_json::to_string(&record).expect("answer serializes"),
        };
        Ok(Unroll {
            answer,
            evidence,
            workspace: ws,
            trace,
        })
    }

    /// Asks `planner` once for a pipeline, validates it, then runs it.
    pub fn run_planned(
        &self,
        planner: &dyn AdaptivePlanner,
        x: &TaskInput,
        scene: &Scene,
        cfg: &PolicyConfig,
    ) -> Result<Unroll, PolicyError> {
        let p = planner.plan(x, scene, cfg);
        self.run_unroll(x, scene, &p, cfg)
    }

    /// Re-runs the session a trace describes and checks that it reproduces
    /// the trace, ignoring timings.
    pub fn reexecute(&self, trace: &Trace) -> Result<Unroll, PolicyError> {
        let bad = |what: &str, e: String| PolicyError::ReplayMismatch(format!("{what}: {e}"));
        let spec: TaskSpec =
            serde_json::from_str(&trace.header.task_json).map_err(|e| bad("task", e.to_string()))?;
        let scene = Scene::from_json(&trace.header.scene_json).map_err(|e| bad("scene", e.to_string()))?;
        let p: Pipeline =
            serde_json::from_str(&trace.header.pipeline).map_err(|e| bad("pipeline", e.to_string()))?;
        let rc: RunConfig =
            serde_json::from_str(&trace.header.config_json).map_err(|e| bad("config", e.to_string()))?;
        let x = TaskInput::new(spec, &scene).map_err(|e| bad("task", e.to_string()))?;
        let engine = Engine {
            registry: self.registry.clone(),
            decoder: rc.decoder,
        };
        let run = engine.run_unroll(&x, &scene, &p, &rc.policy)?;
        if run.trace.fingerprint() != trace.fingerprint() {
            let at = run
                .trace
                .records
                .iter()
                .zip(&trace.records)
                .position(|(a, b)| a.result_hash != b.result_hash || a.status != b.status)
                .map_or("answer or step count".to_string(), |i| format!("step {}", i + 1));
            return Err(PolicyError::ReplayMismatch(at));
        }
        Ok(run)
    }
}

/// Runs with the built-in registry and default decoder.
pub fn run_unroll(x: &TaskInput, scene: &Scene, p: &Pipeline, cfg: &PolicyConfig) -> Result<Unroll, PolicyError> {
    Engine::default().run_unroll(x, scene, p, cfg)
}
