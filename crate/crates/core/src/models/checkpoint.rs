use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneConfig, CfcModel, ModelConfig, TimePolicy, Variant};
use crate::autodiff::Tensor;
use crate::error::{invalid, Result};

const CHECKPOINT_VERSION: u32 = 1;

fn default_forget_bias() -> f64 {
    1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    variant: Variant,
    m: usize,
    #[serde(rename = "D")]
    d: usize,
    backbone_config: BackboneConfig,
    tensors: BTreeMap<String, Tensor>,
    time_policy: TimePolicy,
    #[serde(default = "default_forget_bias")]
    forget_bias: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    gate_only: bool,
}

impl CfcModel {
    pub fn to_json(&self) -> Result<String> {
        let c = &self.config;
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            variant: c.variant,
            m: c.inputs,
            d: c.hidden,
            backbone_config: c.backbone,
            tensors: self.params.clone(),
            time_policy: c.time_policy,
            forget_bias: c.forget_bias,
            gate_only: c.gate_only,
        })?)
    }

    /// Parses a checkpoint; every tensor must match the architecture it
    /// declares, by name and shape.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(invalid(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let config = ModelConfig {
            variant: ck.variant,
            inputs: ck.m,
            hidden: ck.d,
            backbone: ck.backbone_config,
            forget_bias: ck.forget_bias,
            gate_only: ck.gate_only,
            time_policy: ck.time_policy,
        };
        let mut model = CfcModel::new(config, 0)?;
        if model.params.len() != ck.tensors.len() {
            let expected: Vec<&String> = model.params.keys().collect();
            return Err(invalid(format!(
                "checkpoint tensors {:?} do not match the architecture {expected:?}",
                ck.tensors.keys().collect::<Vec<_>>()
            )));
        }
        for (name, t) in ck.tensors {
            if !t.is_finite() {
                return Err(invalid(format!("tensor '{name}' has non-finite values")));
            }
            model.set_param(&name, t)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
