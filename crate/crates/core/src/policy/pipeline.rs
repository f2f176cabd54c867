use std::fmt;

use serde::{Deserialize, Serialize};

use crate::microworld::geometry::Motion;
use crate::primitives::{Params, Registry};

use super::PolicyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub primitive: String,
    #[serde(default, skip_serializing_if = "is_empty")]
    pub params: Params,
}

fn is_empty(p: &Params) -> bool {
    p.0.is_empty()
}

impl Step {
    pub fn new(primitive: &str) -> Self {
        Self {
            primitive: primitive.to_string(),
            params: Params::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params = self.params.with(key, value);
        self
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.params.0.is_empty() {
            f.write_str(&self.primitive)
        } else {
            write!(f, "{}({})", self.primitive, self.params)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub name: String,
    #[serde(default)]
    pub steps: Vec<Step>,
}

/// Ablation presets, each a superset of the one it extends.
pub const PRESET_NAMES: [&str; 7] = [
    "direct",
    "text_think_short",
    "text_think_long",
    "plus_pose_text",
    "plus_nvs_visual",
    "plus_visual_tokens",
    "combined",
];

pub const DEPTH_PIPELINE_NAMES: [&str; 3] = ["depth_caption", "generic_caption", "depth_caption_tokens"];

impl Pipeline {
    pub fn new(name: &str, steps: Vec<Step>) -> Self {
        Self {
            name: name.to_string(),
            steps,
        }
    }

    pub fn direct() -> Self {
        Self::new("direct", Vec::new())
    }

    /// Horizon T.
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Named preset or depth pipeline.
    pub fn preset(name: &str) -> Option<Pipeline> {
        let s = Step::new;
        let steps = match name {
            "direct" => vec![],
            "text_think_short" => vec![s("text_think_short")],
            "text_think_long" => vec![s("text_think_long")],
            "plus_pose_text" => vec![s("estimate_pose"), s("text_think_short")],
            "plus_nvs_visual" => {
                let mut v = vec![s("estimate_pose"), s("text_think_short")];
                v.extend(Motion::ALL.iter().map(|m| s("synthesize_view").with("motion", m.as_str())));
                v
            }
            "plus_visual_tokens" => vec![s("rollout_visual_tokens")],
            "combined" => vec![s("text_think_long"), s("rollout_visual_tokens")],
            "depth_caption" => vec![s("depth_caption")],
            "generic_caption" => vec![s("generic_caption")],
            "depth_caption_tokens" => vec![s("depth_caption"), s("rollout_visual_tokens")],
            _ => return None,
        };
        Some(Self::new(name, steps))
    }

    pub fn presets() -> Vec<Pipeline> {
        PRESET_NAMES.iter().filter_map(|n| Self::preset(n)).collect()
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), PolicyError> {
        if self.name.trim().is_empty() {
            return Err(PolicyError::InvalidPipeline("empty pipeline name".into()));
        }
        for st in &self.steps {
            if !registry.contains(&st.primitive) {
                return Err(PolicyError::UnknownPrimitive {
                    pipeline: self.name.clone(),
                    primitive: st.primitive.clone(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let steps: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        write!(f, "{}: [{}]", self.name, steps.join(", "))
    }
}
