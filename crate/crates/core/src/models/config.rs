use serde::{Deserialize, Serialize};

use crate::autodiff::Unary;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cf-s")]
    CfS,
    #[serde(rename = "cfc")]
    Cfc,
    #[serde(rename = "cfc-nogate")]
    CfcNoGate,
    #[serde(rename = "cfc-mmrnn")]
    CfcMmrnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::CfS,
        Variant::Cfc,
        Variant::CfcNoGate,
        Variant::CfcMmrnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CfS => "cf-s",
            Variant::Cfc => "cfc",
            Variant::CfcNoGate => "cfc-nogate",
            Variant::CfcMmrnn => "cfc-mmrnn",
        }
    }

    pub fn has_backbone(self) -> bool {
        self != Variant::CfS
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Silu,
    Relu,
    Tanh,
    LecunTanh,
}

impl Activation {
    pub(crate) fn unary(self) -> Unary {
        match self {
            Activation::Silu => Unary::Silu,
            Activation::Relu => Unary::Relu,
            Activation::Tanh => Unary::Tanh,
            Activation::LecunTanh => Unary::LecunTanh,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Self::Silu),
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "lecun-tanh" | "lecun_tanh" => Ok(Self::LecunTanh),
            other => Err(invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub units: usize,
    pub layers: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            units: 128,
            layers: 1,
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.layers == 0 {
            return Err(invalid("backbone needs units > 0 and layers >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!(
                "backbone dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    /// `t` is the gap to the previous sample.
    Timestamped,
    /// `t` runs evenly from `a` to `b` over the padded sequence length.
    #[default]
    Equidistant,
}

impl std::str::FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timestamped" => Ok(Self::Timestamped),
            "equidistant" => Ok(Self::Equidistant),
            other => Err(invalid(format!("unknown time mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePolicy {
    pub mode: TimeMode,
    pub a: f64,
    pub b: f64,
}

impl Default for TimePolicy {
    fn default() -> Self {
        Self {
            mode: TimeMode::Equidistant,
            a: 1.0,
            b: 1.0,
        }
    }
}

impl TimePolicy {
    pub fn timestamped() -> Self {
        Self {
            mode: TimeMode::Timestamped,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(invalid("time policy bounds must be finite and >= 0"));
        }
        Ok(())
    }

    /// The equidistant time for step `k` of `len`.
    pub fn equidistant(&self, k: usize, len: usize) -> f64 {
        if len <= 1 {
            self.a
        } else {
            self.a + (self.b - self.a) * k as f64 / (len - 1) as f64
        }
    }
}

/// Everything needed to build a fresh [`CfcModel`](super::CfcModel).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub inputs: usize,
    pub hidden: usize,
    pub backbone: BackboneConfig,
    /// Initial forget-gate bias of the mixed-memory variant.
    pub forget_bias: f64,
    /// CfC-noGate only: drop the additive `h` head and keep `σ(-f t) ⊙ g`.
    pub gate_only: bool,
    pub time_policy: TimePolicy,
}

impl ModelConfig {
    pub fn new(variant: Variant, inputs: usize, hidden: usize) -> Self {
        Self {
            variant,
            inputs,
            hidden,
            backbone: BackboneConfig::default(),
            forget_bias: 1.0,
            gate_only: false,
            time_policy: TimePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.hidden == 0 {
            return Err(invalid("model needs inputs > 0 and hidden > 0"));
        }
        if !self.forget_bias.is_finite() {
            return Err(invalid("forget_bias must be finite"));
        }
        self.backbone.validate()?;
        self.time_policy.validate()
    }
}
