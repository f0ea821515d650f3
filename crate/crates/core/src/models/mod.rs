//! The closed-form continuous-depth cell family.
//!
//! * `cf-s`: `x_t = B ⊙ e^{-(w_tau + f(x, I)) t} ⊙ f(-x, -I) + A` with
//!   `f(x, I) = sigmoid(I W_in + x W_rec + b)`.
//! * `cfc`: `x_t = σ(-f̂ t) ⊙ ĝ + (1 - σ(-f̂ t)) ⊙ ĥ` where `f̂`, `ĝ`, `ĥ` are
//!   linear heads (`ĝ`, `ĥ` with tanh) on a shared backbone over `[x; I]`.
//! * `cfc-nogate`: `σ(-f̂ t) ⊙ ĝ + ĥ`, or `σ(-f̂ t) ⊙ ĝ` with `gate_only`.
//! * `cfc-mmrnn`: an LSTM memory cell whose output `o ⊙ tanh(c)` is the
//!   previous state seen by a CfC step.
//!
//! Every cell is written once against [`Graph`], so the same code runs on a
//! recording [`Tape`](crate::Tape) for training and on [`Eval`] for inference.

mod batch;
mod checkpoint;
mod config;
mod series;

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use batch::Batch;
pub use config::{Activation, BackboneConfig, ModelConfig, TimeMode, TimePolicy, Variant};
pub use series::IrregularSeries;

use crate::autodiff::{Eval, Graph, Tensor};
use crate::error::{invalid, Result};

/// Parameters bound to a graph, by name.
pub type Bound<N> = BTreeMap<String, N>;

/// Recurrent state; `c` is the memory cell of `cfc-mmrnn`.
#[derive(Clone, Debug)]
pub struct CellState<N> {
    pub h: N,
    pub c: Option<N>,
}

/// Output of [`CfcModel::unroll`]: the state after each step.
#[derive(Clone, Debug)]
pub struct Unrolled<N> {
    pub states: Vec<N>,
    pub last: CellState<N>,
}

/// Per-step hidden states and the final logit for one series.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOutput {
    pub states: Vec<Vec<f64>>,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CfcModel {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

impl CfcModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (config.inputs, config.hidden);
        let mut params = BTreeMap::new();
        let mut put = |name: &str, t: Tensor| {
            params.insert(name.to_string(), t);
        };
        match config.variant {
            Variant::CfS => {
                put("cfs.w_in", glorot(&mut rng, m, d));
                put("cfs.w_rec", glorot(&mut rng, d, d));
                put("cfs.b", Tensor::zeros(&[d]));
                let b = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                put("cfs.B", Tensor::vector(b));
                put("cfs.A", Tensor::zeros(&[d]));
                put("cfs.w_tau", Tensor::zeros(&[d]));
            }
            variant => {
                let bb = config.backbone;
                let mut fan_in = d + m;
                for l in 0..bb.layers {
                    put(
                        &format!("backbone.{l}.w"),
                        glorot(&mut rng, fan_in, bb.units),
                    );
                    put(&format!("backbone.{l}.b"), Tensor::zeros(&[bb.units]));
                    fan_in = bb.units;
                }
                for head in ["head_f", "head_g", "head_h"] {
                    put(&format!("{head}.w"), glorot(&mut rng, bb.units, d));
                    put(&format!("{head}.b"), Tensor::zeros(&[d]));
                }
                if variant == Variant::CfcMmrnn {
                    put("lstm.w", glorot(&mut rng, m + d, 4 * d));
                    let mut b = Tensor::zeros(&[4 * d]);
                    b.data_mut()[d..2 * d].fill(config.forget_bias);
                    put("lstm.b", b);
                }
            }
        }
        put("readout.w", glorot(&mut rng, d, 1));
        put("readout.b", Tensor::zeros(&[1]));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn inputs(&self) -> usize {
        self.config.inputs
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn time_policy(&self) -> &TimePolicy {
        &self.config.time_policy
    }

    pub fn set_time_policy(&mut self, policy: TimePolicy) -> Result<()> {
        policy.validate()?;
        self.config.time_policy = policy;
        Ok(())
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| invalid(format!("unknown parameter '{name}'")))?;
        if slot.shape() != value.shape() {
            return Err(invalid(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    /// Clamps `w_tau` to be non-negative (a no-op for other variants).
    pub fn project(&mut self) {
        if let Some(w) = self.params.get_mut("cfs.w_tau") {
            for v in w.data_mut() {
                *v = v.max(0.0);
            }
        }
    }

    pub fn bind<G: Graph>(&self, g: &mut G) -> Bound<G::Node> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), g.param(v)))
            .collect()
    }

    pub fn zero_state<G: Graph>(&self, g: &mut G, batch: usize) -> CellState<G::Node> {
        let d = self.config.hidden;
        CellState {
            h: g.constant(Tensor::zeros(&[batch, d])),
            c: (self.variant() == Variant::CfcMmrnn)
                .then(|| g.constant(Tensor::zeros(&[batch, d]))),
        }
    }

    /// `t` (one entry per batch row) broadcast to `[B, D]`.
    fn time_node<G: Graph>(&self, g: &mut G, t: &[f64]) -> Result<G::Node> {
        if let Some(bad) = t.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!(
                "cell time must be finite and >= 0, got {bad}"
            )));
        }
        let d = self.config.hidden;
        let data = t.iter().flat_map(|&v| std::iter::repeat_n(v, d)).collect();
        Ok(g.constant(Tensor::new(vec![t.len(), d], data)?))
    }

    fn linear<G: Graph>(g: &mut G, p: &Bound<G::Node>, name: &str, x: &G::Node) -> Result<G::Node> {
        let y = g.matmul(x, &p[&format!("{name}.w")])?;
        g.add(&y, &p[&format!("{name}.b")])
    }

    /// Cf-S step on `x_prev: [B, D]`, `input: [B, m]`.
    pub fn cfs_step<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        x_prev: &G::Node,
        input: &G::Node,
        t: &[f64],
    ) -> Result<G::Node> {
        if self.variant() != Variant::CfS {
            return Err(invalid(format!(
                "cfs_step called on a {} model",
                self.variant()
            )));
        }
        let t = self.time_node(g, t)?;
        let a = g.matmul(input, &p["cfs.w_in"])?;
        let b = g.matmul(x_prev, &p["cfs.w_rec"])?;
        let pre = g.add(&a, &b)?;
        let f = {
            let u = g.add(&pre, &p["cfs.b"])?;
            g.sigmoid(&u)?
        };
        let f_neg = {
            let u = g.neg(&pre)?;
            let u = g.add(&u, &p["cfs.b"])?;
            g.sigmoid(&u)?
        };
        let rate = g.add(&f, &p["cfs.w_tau"])?;
        let decay = g.mul(&rate, &t)?;
        let decay = g.neg(&decay)?;
        let decay = g.exp(&decay)?;
        let y = g.mul(&decay, &f_neg)?;
        let y = g.mul(&y, &p["cfs.B"])?;
        g.add(&y, &p["cfs.A"])
    }

    /// The shared backbone and the three heads: returns `(f̂, ĝ, ĥ)`.
    fn heads<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        x_prev: &G::Node,
        input: &G::Node,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(G::Node, G::Node, G::Node)> {
        let bb = self.config.backbone;
        let mut z = g.concat(&[x_prev.clone(), input.clone()])?;
        for l in 0..bb.layers {
            z = Self::linear(g, p, &format!("backbone.{l}"), &z)?;
            z = g.unary(bb.activation.unary(), &z)?;
            if bb.dropout > 0.0 {
                z = g.dropout(&z, bb.dropout, reborrow(&mut rng))?;
            }
        }
        let f = Self::linear(g, p, "head_f", &z)?;
        let gg = Self::linear(g, p, "head_g", &z)?;
        let gg = g.tanh(&gg)?;
        let h = Self::linear(g, p, "head_h", &z)?;
        let h = g.tanh(&h)?;
        Ok((f, gg, h))
    }

    /// The gate `σ(-f̂ t)`.
    fn gate<G: Graph>(&self, g: &mut G, f: &G::Node, t: &[f64]) -> Result<G::Node> {
        let t = self.time_node(g, t)?;
        let u = g.mul(f, &t)?;
        let u = g.neg(&u)?;
        g.sigmoid(&u)
    }

    /// CfC (or CfC-noGate) step.
    pub fn cfc_step<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        x_prev: &G::Node,
        input: &G::Node,
        t: &[f64],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Node> {
        let variant = self.variant();
        if !variant.has_backbone() {
            return Err(invalid(format!("cfc_step called on a {variant} model")));
        }
        let (f, gg, h) = self.heads(g, p, x_prev, input, rng)?;
        let gate = self.gate(g, &f, t)?;
        let first = g.mul(&gate, &gg)?;
        match variant {
            Variant::CfcNoGate if self.config.gate_only => Ok(first),
            Variant::CfcNoGate => g.add(&first, &h),
            _ => {
                let ones = g.constant(Tensor::full(g.value(&gate).shape(), 1.0));
                let co = g.sub(&ones, &gate)?;
                let second = g.mul(&co, &h)?;
                g.add(&first, &second)
            }
        }
    }

    /// The two gates `(σ(-f̂ t), 1 - σ(-f̂ t))` of a CfC step, for inspection.
    pub fn cfc_gates<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        x_prev: &G::Node,
        input: &G::Node,
        t: &[f64],
    ) -> Result<(G::Node, G::Node)> {
        let (f, _, _) = self.heads(g, p, x_prev, input, None)?;
        let gate = self.gate(g, &f, t)?;
        let ones = g.constant(Tensor::full(g.value(&gate).shape(), 1.0));
        let co = g.sub(&ones, &gate)?;
        Ok((gate, co))
    }

    /// The `ĝ` and `ĥ` heads for `[x; I]`, for inspection.
    pub fn cfc_targets<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        x_prev: &G::Node,
        input: &G::Node,
    ) -> Result<(G::Node, G::Node)> {
        let (_, gg, h) = self.heads(g, p, x_prev, input, None)?;
        Ok((gg, h))
    }

    /// LSTM update of the memory cell, returning `(o ⊙ tanh(c_t), c_t)`.
    pub fn lstm_update<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        h_prev: &G::Node,
        c_prev: &G::Node,
        input: &G::Node,
    ) -> Result<(G::Node, G::Node)> {
        let d = self.config.hidden;
        let z = g.concat(&[input.clone(), h_prev.clone()])?;
        let z = Self::linear(g, p, "lstm", &z)?;
        let i = g.slice(&z, 0, d)?;
        let i = g.sigmoid(&i)?;
        let f = g.slice(&z, d, 2 * d)?;
        let f = g.sigmoid(&f)?;
        let o = g.slice(&z, 2 * d, 3 * d)?;
        let o = g.sigmoid(&o)?;
        let cand = g.slice(&z, 3 * d, 4 * d)?;
        let cand = g.tanh(&cand)?;
        let keep = g.mul(&f, c_prev)?;
        let write = g.mul(&i, &cand)?;
        let c = g.add(&keep, &write)?;
        let tc = g.tanh(&c)?;
        let out = g.mul(&o, &tc)?;
        Ok((out, c))
    }

    /// Mixed-memory step: returns `(h_t, c_t)`.
    #[allow(clippy::too_many_arguments)]
    pub fn mmrnn_step<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        h_prev: &G::Node,
        c_prev: &G::Node,
        input: &G::Node,
        t: &[f64],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(G::Node, G::Node)> {
        if self.variant() != Variant::CfcMmrnn {
            return Err(invalid(format!(
                "mmrnn_step called on a {} model",
                self.variant()
            )));
        }
        let (x, c) = self.lstm_update(g, p, h_prev, c_prev, input)?;
        let h = self.cfc_step(g, p, &x, input, t, rng)?;
        Ok((h, c))
    }

    /// One step of whichever variant this model is.
    pub fn step<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        state: &CellState<G::Node>,
        input: &G::Node,
        t: &[f64],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<CellState<G::Node>> {
        match self.variant() {
            Variant::CfS => Ok(CellState {
                h: self.cfs_step(g, p, &state.h, input, t)?,
                c: None,
            }),
            Variant::Cfc | Variant::CfcNoGate => Ok(CellState {
                h: self.cfc_step(g, p, &state.h, input, t, rng)?,
                c: None,
            }),
            Variant::CfcMmrnn => {
                let c_prev = state
                    .c
                    .as_ref()
                    .ok_or_else(|| invalid("mixed-memory state needs a memory cell"))?;
                let (h, c) = self.mmrnn_step(g, p, &state.h, c_prev, input, t, rng)?;
                Ok(CellState { h, c: Some(c) })
            }
        }
    }

    /// Runs the cell over a batch from `init`. Rows whose step is masked keep
    /// their previous state.
    pub fn unroll<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        batch: &Batch,
        init: CellState<G::Node>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Unrolled<G::Node>> {
        if batch.steps > 0 && batch.dims() != self.config.inputs {
            return Err(invalid(format!(
                "model expects {} input features, batch has {}",
                self.config.inputs,
                batch.dims()
            )));
        }
        let d = self.config.hidden;
        let mut state = init;
        let mut states = Vec::with_capacity(batch.steps);
        for k in 0..batch.steps {
            let mask = &batch.mask[k];
            if mask.iter().all(|m| !m) {
                states.push(state.h.clone());
                continue;
            }
            let input = g.constant(batch.inputs[k].clone());
            let next = self.step(g, p, &state, &input, &batch.times[k], reborrow(&mut rng))?;
            state = if mask.iter().all(|&m| m) {
                next
            } else {
                let keep: Vec<f64> = mask
                    .iter()
                    .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, d))
                    .collect();
                let hold: Vec<f64> = keep.iter().map(|v| 1.0 - v).collect();
                let keep = g.constant(Tensor::new(vec![batch.size, d], keep)?);
                let hold = g.constant(Tensor::new(vec![batch.size, d], hold)?);
                let mut blend = |new: &G::Node, old: &G::Node| -> Result<G::Node> {
                    let a = g.mul(new, &keep)?;
                    let b = g.mul(old, &hold)?;
                    g.add(&a, &b)
                };
                let h = blend(&next.h, &state.h)?;
                let c = match (&next.c, &state.c) {
                    (Some(n), Some(o)) => Some(blend(n, o)?),
                    _ => None,
                };
                CellState { h, c }
            };
            states.push(state.h.clone());
        }
        Ok(Unrolled {
            states,
            last: state,
        })
    }

    /// Linear readout `[B, D] → [B, 1]`.
    pub fn readout<G: Graph>(&self, g: &mut G, p: &Bound<G::Node>, h: &G::Node) -> Result<G::Node> {
        Self::linear(g, p, "readout", h)
    }

    /// Final-step logits `[B, 1]` from a zero initial state.
    pub fn logits<G: Graph>(
        &self,
        g: &mut G,
        p: &Bound<G::Node>,
        batch: &Batch,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Node> {
        let init = self.zero_state(g, batch.size);
        let out = self.unroll(g, p, batch, init, rng)?;
        self.readout(g, p, &out.last.h)
    }

    /// Inference logits for a set of series, in order.
    pub fn predict(&self, series: &[&IrregularSeries]) -> Result<Vec<f64>> {
        if series.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Eval;
        let p = self.bind(&mut g);
        let batch = Batch::new(series, &self.config.time_policy)?;
        Ok(self.logits(&mut g, &p, &batch, None)?.into_data())
    }

    /// Hidden state after every step and the final logit for one series.
    pub fn unroll_sequence(&self, series: &IrregularSeries) -> Result<SequenceOutput> {
        let mut g = Eval;
        let p = self.bind(&mut g);
        let batch = Batch::new(&[series], &self.config.time_policy)?;
        let init = self.zero_state(&mut g, 1);
        let out = self.unroll(&mut g, &p, &batch, init, None)?;
        let logit = self.readout(&mut g, &p, &out.last.h)?.item()?;
        Ok(SequenceOutput {
            states: out.states.into_iter().map(Tensor::into_data).collect(),
            logit,
        })
    }
}
