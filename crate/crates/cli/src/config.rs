use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use unroll_core::backend_adapter::{register_remote, EndpointSpec};
use unroll_core::decoder::DecoderConfig;
use unroll_core::evalharness::{AblationConfig, SuiteSpec};
use unroll_core::policy::{Engine, Pipeline, PolicyConfig, PRESET_NAMES, DEPTH_PIPELINE_NAMES};
use unroll_core::primitives::{NoiseSpec, PrimitiveDescriptor};

use crate::CliError;

pub const RUN_CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    RUN_CONFIG_VERSION
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formats {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
    #[serde(default = "yes")]
    pub plot: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            plot: true,
        }
    }
}

/// A primitive served by an external endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub endpoint: EndpointSpec,
    pub primitive: PrimitiveDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Built on the fly when no suite file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSpec>,
    #[serde(default)]
    pub pipelines: Vec<String>,
    /// Pipelines defined here take precedence over presets of the same name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub custom_pipelines: Vec<Pipeline>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub noise: BTreeMap<String, NoiseSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub remote: Vec<RemoteSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub formats: Formats,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            suite: None,
            pipelines: Vec::new(),
            custom_pipelines: Vec::new(),
            policy: PolicyConfig::default(),
            decoder: DecoderConfig::default(),
            noise: BTreeMap::new(),
            remote: Vec::new(),
            output_dir: default_output_dir(),
            formats: Formats::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "config version {} is not {RUN_CONFIG_VERSION}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Checks everything that does not need the registry.
    pub fn validate(&self) -> Result<(), CliError> {
        self.policy
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for (id, n) in &self.noise {
            n.validate().map_err(|e| CliError::Usage(format!("noise for {id}: {e}")))?;
        }
        for r in &self.remote {
            r.endpoint
                .validate()
                .map_err(|e| CliError::Usage(format!("remote {}: {e}", r.primitive.id)))?;
        }
        if let Some(s) = &self.suite {
            if s.size == 0 {
                return Err(CliError::Usage("suite size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            policy: self.policy.clone(),
            decoder: self.decoder.clone(),
            noise: self.noise.clone(),
        }
    }

    pub fn engine(&self) -> Result<Engine, CliError> {
        let mut engine = self.ablation().engine().map_err(|e| CliError::Runtime(e.to_string()))?;
        for r in &self.remote {
            engine.registry = register_remote(&engine.registry, &r.endpoint, r.primitive.clone())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Ok(engine)
    }

    pub fn resolve_pipelines(&self) -> Result<Vec<Pipeline>, CliError> {
        if self.pipelines.is_empty() {
            return Err(CliError::Usage("no pipelines selected".into()));
        }
        self.pipelines
            .iter()
            .map(|name| {
                self.custom_pipelines
                    .iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .or_else(|| Pipeline::preset(name))
                    .ok_or_else(|| {
                        CliError::Runtime(format!(
                            "unknown pipeline {name:?}; presets are {}; depth pipelines are {}",
                            PRESET_NAMES.join(", "),
                            DEPTH_PIPELINE_NAMES.join(", ")
                        ))
                    })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parses `id=gaussian:SIGMA[:SEED]`, `id=dropout:P[:SEED]` or `id=none`.
pub fn parse_noise(s: &str) -> Result<(String, NoiseSpec), String> {
    let (id, spec) = s.split_once('=').ok_or("expected ID=KIND[:VALUE[:SEED]]")?;
    let mut parts = spec.split(':');
    let kind = parts.next().unwrap_or_default();
    let value: f64 = match parts.next() {
        Some(v) => v.parse().map_err(|_| format!("bad noise value {v:?}"))?,
        None => 0.0,
    };
    let seed: u64 = match parts.next() {
        Some(v) => v.parse().map_err(|_| format!("bad noise seed {v:?}"))?,
        None => 0,
    };
    let n = match kind {
        "none" => NoiseSpec::none(),
        "gaussian" => NoiseSpec::gaussian(value, seed),
        "dropout" => NoiseSpec::dropout(value, seed),
        k => return Err(format!("unknown noise kind {k:?}")),
    };
    n.validate()?;
    Ok((id.to_string(), n))
}
