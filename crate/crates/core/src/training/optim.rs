use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
    Adamw,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "rmsprop" => Ok(Self::Rmsprop),
            "adamw" => Ok(Self::Adamw),
            other => Err(invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_RHO: f64 = 0.9;
pub const EPSILON: f64 = 1e-8;

/// First-order optimizer with per-parameter state. Weight decay is folded
/// into the gradient for Adam and RMSprop and applied to the weights
/// directly for AdamW.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    steps: i32,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Updates every parameter that has a gradient.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        self.steps += 1;
        let t = self.steps;
        let wd = self.weight_decay;
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| invalid(format!("gradient for unknown parameter '{name}'")))?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let n = p.len();
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let w = p.data_mut();
            match self.kind {
                OptimizerKind::Rmsprop => {
                    for i in 0..n {
                        let gi = g.data()[i] + wd * w[i];
                        v[i] = RMSPROP_RHO * v[i] + (1.0 - RMSPROP_RHO) * gi * gi;
                        w[i] -= lr * gi / (v[i].sqrt() + EPSILON);
                    }
                }
                OptimizerKind::Adam | OptimizerKind::Adamw => {
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; n]);
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    let coupled = self.kind == OptimizerKind::Adam;
                    for i in 0..n {
                        let gi = if coupled {
                            g.data()[i] + wd * w[i]
                        } else {
                            g.data()[i]
                        };
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let update = (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
                        if !coupled {
                            w[i] -= lr * wd * w[i];
                        }
                        w[i] -= lr * update;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`
/// (`0` disables clipping). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::vector(vec![v]))])
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = one(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0);
        opt.step(&mut p, &one(1.0), 0.1).unwrap();
        let delta = p["w"].data()[0] - 1.0;
        assert!((delta + 0.1).abs() < 1e-8, "{delta}");
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = one(0.0);
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, 0.0);
        opt.step(&mut p, &one(2.0), 0.01).unwrap();
        // v = 0.1·4, step = 0.01·2/√0.4
        let want = -0.01 * 2.0 / (0.4f64.sqrt() + EPSILON);
        assert!((p["w"].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut a = one(2.0);
        let mut b = one(2.0);
        Optimizer::new(OptimizerKind::Adamw, 0.5)
            .step(&mut a, &one(0.0), 0.1)
            .unwrap();
        Optimizer::new(OptimizerKind::Adam, 0.5)
            .step(&mut b, &one(0.0), 0.1)
            .unwrap();
        assert!((a["w"].data()[0] - 1.9).abs() < 1e-15);
        // coupled decay turns into a normalised gradient step of size lr
        assert!((b["w"].data()[0] - 1.9).abs() < 1e-7);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::vector(vec![3.0])),
            ("b".to_string(), Tensor::vector(vec![4.0])),
        ]);
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
        assert!((g["b"].data()[0] - 0.8).abs() < 1e-15);
        let n = clip_global_norm(&mut g, 0.0);
        assert!((n - 1.0).abs() < 1e-15);
    }
}
