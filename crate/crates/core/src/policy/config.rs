use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;

use super::{Pipeline, PolicyError};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_BUDGET: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    #[default]
    StopAndDecode,
    SkipStep,
}

impl BudgetPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetPolicy::StopAndDecode => "stop_and_decode",
            BudgetPolicy::SkipStep => "skip_step",
        }
    }

    pub fn parse(s: &str) -> Option<BudgetPolicy> {
        match s {
            "stop_and_decode" => Some(BudgetPolicy::StopAndDecode),
            "skip_step" => Some(BudgetPolicy::SkipStep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub budget: u64,
    #[serde(default)]
    pub on_budget_exceeded: BudgetPolicy,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            on_budget_exceeded: BudgetPolicy::StopAndDecode,
            rng_seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn new(budget: u64, on_budget_exceeded: BudgetPolicy, rng_seed: u64) -> Self {
        Self {
            budget,
            on_budget_exceeded,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.budget == 0 {
            return Err(PolicyError::InvalidConfig("budget must be positive".into()));
        }
        Ok(())
    }
}

/// On-disk policy configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub version: u32,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    /// Extra pipelines; preset names need not be listed.
    #[serde(default)]
    pub pipelines: Vec<Pipeline>,
}

impl Default for PolicyFile {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            policy: PolicyConfig::default(),
            decoder: DecoderConfig::default(),
            pipelines: Vec::new(),
        }
    }
}

impl PolicyFile {
    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let v: serde_json::Value =
            serde_json::from_str(s).map_err(|e| PolicyError::InvalidConfig(e.to_string()))?;
        match v.get("version").and_then(|v| v.as_u64()) {
            Some(n) if n == CONFIG_VERSION as u64 => {}
            Some(n) => {
                return Err(PolicyError::InvalidConfig(format!(
                    "unsupported config version {n}, expected {CONFIG_VERSION}"
                )))
            }
            None => return Err(PolicyError::InvalidConfig("missing config version".into())),
        }
        let f: PolicyFile =
            serde_json::from_value(v).map_err(|e| PolicyError::InvalidConfig(e.to_string()))?;
        f.policy.validate()?;
        for (i, p) in f.pipelines.iter().enumerate() {
            if f.pipelines[..i].iter().any(|q| q.name == p.name) {
                return Err(PolicyError::InvalidConfig(format!("duplicate pipeline {:?}", p.name)));
            }
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// A pipeline from this file, else a preset.
    pub fn pipeline(&self, name: &str) -> Option<Pipeline> {
        self.pipelines
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| Pipeline::preset(name))
    }
}
