//! Primitive registry and invocation.

mod builtin;
pub mod describe;
mod noise;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microworld::geometry::Motion;
use crate::microworld::scene::Scene;
use crate::seed;
use crate::workspace::{
    hash_state, ContentHash, ContextItem, InvocationRecord, Modality, Origin, Payload,
    Provenance, StepStatus, TaskInput, Workspace, WorkspaceError,
};

pub use builtin::{
    builtin_registry, token_grid, BUILTIN_IDS, DEPTH_BUCKET_METERS, LONG_THINK_CAP,
    SHORT_THINK_CAP, TOKEN_GRID_SIZE, TOKEN_SUPERSAMPLE,
};
pub use noise::{NoiseKind, NoiseSpec};
pub(crate) use builtin::think_facts;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrimitiveError {
    #[error("duplicate primitive id {0:?}")]
    DuplicateId(String),
    #[error("primitive {0:?} failed: {1}")]
    PrimitiveFailed(String, String),
    #[error("budget exceeded: needed {needed}, available {available}")]
    BudgetExceeded { needed: u64, available: u64 },
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveDescriptor {
    pub id: String,
    pub produces: Modality,
    pub expected_cost: u64,
    pub noise: NoiseSpec,
}

/// Step parameters as sorted key/value strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| format!("parameter {key}={v:?} is not a number")),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| format!("parameter {key}={v:?} is not an integer")),
        }
    }

    pub fn motion(&self) -> Result<Motion, String> {
        self.get("motion")
            .ok_or_else(|| "missing parameter motion".to_string())?
            .parse()
            .map_err(|e: crate::microworld::geometry::GeometryError| e.to_string())
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Everything a primitive may look at.
pub struct Call<'a> {
    pub task: &'a TaskInput,
    pub workspace: &'a Workspace,
    pub scene: &'a Scene,
    pub params: &'a Params,
    pub noise: &'a NoiseSpec,
    pub seed: u64,
}

pub trait Primitive: Send + Sync {
    fn run(&self, call: &Call<'_>) -> Result<Vec<Payload>, String>;
}

impl<F> Primitive for F
where
    F: Fn(&Call<'_>) -> Result<Vec<Payload>, String> + Send + Sync,
{
    fn run(&self, call: &Call<'_>) -> Result<Vec<Payload>, String> {
        self(call)
    }
}

#[derive(Clone)]
struct Entry {
    desc: PrimitiveDescriptor,
    imp: Arc<dyn Primitive>,
    origin: Origin,
}

/// Immutable once built; `register` returns an extended copy.
#[derive(Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

/// Identifies one invocation for seeding and provenance.
#[derive(Debug, Clone, Copy)]
pub struct InvokeContext {
    pub step_index: u32,
    pub session_seed: u64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &self,
        desc: PrimitiveDescriptor,
        imp: impl Primitive + 'static,
    ) -> Result<Registry, PrimitiveError> {
        self.register_with_origin(desc, imp, Origin::Local)
    }

    /// Registers a primitive whose outputs come from an external backend;
    /// its invocation records are marked remote.
    pub fn register_remote(
        &self,
        desc: PrimitiveDescriptor,
        imp: impl Primitive + 'static,
    ) -> Result<Registry, PrimitiveError> {
        self.register_with_origin(desc, imp, Origin::Remote)
    }

    fn register_with_origin(
        &self,
        desc: PrimitiveDescriptor,
        imp: impl Primitive + 'static,
        origin: Origin,
    ) -> Result<Registry, PrimitiveError> {
        if self.entries.contains_key(&desc.id) {
            return Err(PrimitiveError::DuplicateId(desc.id));
        }
        if desc.expected_cost == 0 {
            return Err(PrimitiveError::InvalidDescriptor(format!(
                "{}: expected_cost must be positive",
                desc.id
            )));
        }
        desc.noise
            .validate()
            .map_err(|e| PrimitiveError::InvalidDescriptor(format!("{}: {e}", desc.id)))?;
        let mut next = self.clone();
        next.entries.insert(
            desc.id.clone(),
            Entry {
                desc,
                imp: Arc::new(imp),
                origin,
            },
        );
        Ok(next)
    }

    /// Copy with the noise of `id` replaced.
    pub fn with_noise(&self, id: &str, noise: NoiseSpec) -> Result<Registry, PrimitiveError> {
        noise
            .validate()
            .map_err(|e| PrimitiveError::InvalidDescriptor(format!("{id}: {e}")))?;
        let mut next = self.clone();
        match next.entries.get_mut(id) {
            Some(e) => e.desc.noise = noise,
            None => {
                return Err(PrimitiveError::PrimitiveFailed(
                    id.to_string(),
                    "not registered".into(),
                ))
            }
        }
        Ok(next)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn origin(&self, id: &str) -> Option<Origin> {
        self.entries.get(id).map(|e| e.origin)
    }

    pub fn descriptor(&self, id: &str) -> Option<&PrimitiveDescriptor> {
        self.entries.get(id).map(|e| &e.desc)
    }

    /// Runs primitive `id` against `w` and checks the result composes.
    ///
    /// The returned record carries the hash of `w` extended by the items.
    pub fn invoke(
        &self,
        id: &str,
        task: &TaskInput,
        w: &Workspace,
        scene: &Scene,
        params: &Params,
        ictx: InvokeContext,
    ) -> Result<(Vec<ContextItem>, InvocationRecord), PrimitiveError> {
        let failed = |cause: String| PrimitiveError::PrimitiveFailed(id.to_string(), cause);
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| failed("not registered".into()))?;
        let seed = invocation_seed(&entry.desc.noise, ictx.session_seed, task.id(), ictx.step_index);
        let inputs_hash = hash_state(w);
        let started = Instant::now();
        let payloads = entry.imp.run(&Call {
            task,
            workspace: w,
            scene,
            params,
            noise: &entry.desc.noise,
            seed,
        });
        let elapsed = started.elapsed();
        let payloads = payloads.map_err(failed)?;
        let items = items_from_payloads(payloads, id, ictx.step_index, seed, inputs_hash)
            .map_err(|e| failed(e.to_string()))?;
        let next = w.compose(&items).map_err(|e| match e {
            WorkspaceError::BudgetExceeded { needed, available } => {
                PrimitiveError::BudgetExceeded { needed, available }
            }
            other => failed(other.to_string()),
        })?;
        let record = InvocationRecord {
            primitive_id: id.to_string(),
            params: params.to_string(),
            step_index: ictx.step_index,
            seed,
            inputs_hash,
            item_hashes: items.iter().map(|i| i.hash()).collect(),
            items: items.clone(),
            result_hash: hash_state(&next),
            elapsed,
            status: StepStatus::Applied,
            origin: entry.origin,
        };
        Ok((items, record))
    }
}

/// Wraps payloads as items with shared provenance.
pub fn items_from_payloads(
    payloads: Vec<Payload>,
    primitive_id: &str,
    step_index: u32,
    seed: u64,
    parent_hash: ContentHash,
) -> Result<Vec<ContextItem>, WorkspaceError> {
    payloads
        .into_iter()
        .map(|p| {
            ContextItem::new(
                p,
                Provenance {
                    step_index,
                    primitive_id: primitive_id.to_string(),
                    rng_seed: seed,
                    parent_hash,
                },
            )
        })
        .collect()
}

/// Per-invocation RNG seed from the primitive's noise seed, the session
/// seed, the task and the step.
pub fn invocation_seed(noise: &NoiseSpec, session_seed: u64, task_id: &str, step: u32) -> u64 {
    seed::mix(&[noise.seed, session_seed, seed::str_seed(task_id), step as u64])
}
