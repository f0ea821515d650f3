//! Compiles an LTC network into a solver-free closed-form network.
//!
//! Each hidden neuron `i` becomes a sum over its incoming synapses `j`:
//!
//! ```text
//! x̂_i(t) = Σ_j (x0_i - A_ij) · e^{-t (1/τ_i + s_ij)} · (1 - s_ij) + A_ij
//! s_ij   = sigmoid(σ_ij (x_pre_j - μ_ij))
//! ```
//!
//! Input synapses read the current input sample. Synapses from hidden
//! neurons read the compiled state of the previous sample (`x0` before the
//! first one), so the compiled network never solves a fixed point.

mod spec;

use serde::{Deserialize, Serialize};

pub use spec::{LtcNetworkSpec, SynapseParams, SPEC_VERSION};

use crate::autodiff::sigmoid;
use crate::error::{invalid, Result};
use crate::ltc::{solve_ivp, OdeSystem, PiecewiseConstantSignal, RhsForm, SolverConfig};
use crate::models::IrregularSeries;

/// How `t` in the exponent is measured for each output sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompiledTime {
    /// Time since the start of the sequence.
    #[default]
    Elapsed,
    /// Time since the previous sample.
    Delta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct CompiledSynapse {
    source: usize,
    sigma: f64,
    mu: f64,
    a: f64,
}

/// The compiled network. Parameters are copied from the source spec
/// unchanged; `incoming[i]` lists the synapses of hidden neuron `i` in
/// source order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormNetwork {
    spec: LtcNetworkSpec,
    incoming: Vec<Vec<CompiledSynapse>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompiledFile {
    version: u32,
    n_inputs: usize,
    n_hidden: usize,
    adjacency: Vec<Vec<u8>>,
    synapses: Vec<SynapseParams>,
    tau: Vec<f64>,
    x0: Vec<f64>,
    compiled: bool,
}

/// Checks the spec and lays out each hidden neuron's incoming synapses.
pub fn compile(spec: &LtcNetworkSpec) -> Result<ClosedFormNetwork> {
    spec.validate()?;
    let n = spec.n_inputs;
    let mut synapses = spec.synapses.clone();
    synapses.sort_by_key(|s| (s.i, s.j));
    let mut incoming = vec![Vec::new(); spec.n_hidden];
    for s in &synapses {
        incoming[s.i - n].push(CompiledSynapse {
            source: s.j,
            sigma: s.sigma,
            mu: s.mu,
            a: s.a,
        });
    }
    Ok(ClosedFormNetwork {
        spec: spec.clone(),
        incoming,
    })
}

impl ClosedFormNetwork {
    pub fn spec(&self) -> &LtcNetworkSpec {
        &self.spec
    }

    pub fn n_inputs(&self) -> usize {
        self.spec.n_inputs
    }

    pub fn n_hidden(&self) -> usize {
        self.spec.n_hidden
    }

    pub fn synapse_count(&self) -> usize {
        self.incoming.iter().map(Vec::len).sum()
    }

    /// Hidden-state trajectories, one row of length `T` per hidden neuron.
    /// `inputs.values[k]` is the input sample at `times[k]`.
    pub fn evaluate(
        &self,
        inputs: &IrregularSeries,
        times: &[f64],
        mode: CompiledTime,
    ) -> Result<Vec<Vec<f64>>> {
        let steps = inputs.len();
        if times.len() != steps {
            return Err(invalid(format!(
                "time vector has {} entries but the series has {steps} samples",
                times.len()
            )));
        }
        if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(invalid("times must be finite and non-negative"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("time vector must be strictly increasing"));
        }
        if steps > 0 && inputs.dims() != self.spec.n_inputs {
            return Err(invalid(format!(
                "network expects {} inputs, series has {}",
                self.spec.n_inputs,
                inputs.dims()
            )));
        }
        let h = self.spec.n_hidden;
        let mut out = vec![Vec::with_capacity(steps); h];
        let mut prev = self.spec.x0.clone();
        let mut cur = vec![0.0; h];
        for k in 0..steps {
            let t = match mode {
                CompiledTime::Elapsed => times[k],
                CompiledTime::Delta if k == 0 => times[0],
                CompiledTime::Delta => times[k] - times[k - 1],
            };
            self.step(&inputs.values[k], &prev, t, &mut cur);
            for (row, &v) in out.iter_mut().zip(&cur) {
                row.push(v);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        Ok(out)
    }

    /// One sample: `input` is the current input, `prev` the previous compiled
    /// state.
    pub fn step(&self, input: &[f64], prev: &[f64], t: f64, out: &mut [f64]) {
        let n = self.spec.n_inputs;
        for (i, syn) in self.incoming.iter().enumerate() {
            let leak = 1.0 / self.spec.tau[i];
            let x0 = self.spec.x0[i];
            let mut acc = 0.0;
            for s in syn {
                let pre = if s.source < n {
                    input[s.source]
                } else {
                    prev[s.source - n]
                };
                let u = s.sigma * (pre - s.mu);
                acc += (x0 - s.a) * (-t * (leak + sigmoid(u))).exp() * sigmoid(-u) + s.a;
            }
            out[i] = acc;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let s = &self.spec;
        let file = CompiledFile {
            version: s.version,
            n_inputs: s.n_inputs,
            n_hidden: s.n_hidden,
            adjacency: s.adjacency.clone(),
            synapses: s.synapses.clone(),
            tau: s.tau.clone(),
            x0: s.x0.clone(),
            compiled: true,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CompiledFile = serde_json::from_str(text)?;
        if !f.compiled {
            return Err(invalid("file is not a compiled network (compiled != true)"));
        }
        compile(&LtcNetworkSpec {
            version: f.version,
            n_inputs: f.n_inputs,
            n_hidden: f.n_hidden,
            adjacency: f.adjacency,
            synapses: f.synapses,
            tau: f.tau,
            x0: f.x0,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The LTC network as an ODE: hidden neuron `i` follows
///
/// ```text
/// dx_i/dt = -(1/τ_i + Σ_j s_ij) x_i + Σ_j A_ij (1/τ_i + s_ij)   (symmetric)
/// dx_i/dt = -(1/τ_i + Σ_j s_ij) x_i + Σ_j A_ij s_ij             (ltc)
/// ```
///
/// The state holds hidden neurons only; inputs arrive through `rhs`.
pub struct NetworkOde<'a> {
    net: &'a ClosedFormNetwork,
    form: RhsForm,
}

impl<'a> NetworkOde<'a> {
    pub fn new(net: &'a ClosedFormNetwork, form: RhsForm) -> Self {
        Self { net, form }
    }
}

impl OdeSystem for NetworkOde<'_> {
    fn dim(&self) -> usize {
        self.net.spec.n_hidden
    }

    fn rhs(&self, _t: f64, x: &[f64], input: &[f64], dx: &mut [f64]) {
        let n = self.net.spec.n_inputs;
        for (i, syn) in self.net.incoming.iter().enumerate() {
            let leak = 1.0 / self.net.spec.tau[i];
            let mut gate = 0.0;
            let mut drive = 0.0;
            for s in syn {
                let pre = if s.source < n {
                    input[s.source]
                } else {
                    x[s.source - n]
                };
                let f = sigmoid(s.sigma * (pre - s.mu));
                gate += f;
                drive += match self.form {
                    RhsForm::Symmetric => s.a * (leak + f),
                    RhsForm::Ltc => s.a * f,
                };
            }
            dx[i] = -(leak + gate) * x[i] + drive;
        }
    }
}

/// Per-neuron and aggregate mean-squared error between the ODE and the
/// compiled network, sampled at the series timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub per_neuron_mse: Vec<f64>,
    pub aggregate_mse: f64,
    /// `H × T` trajectories at the sample times.
    #[serde(skip)]
    pub ode: Vec<Vec<f64>>,
    #[serde(skip)]
    pub compiled: Vec<Vec<f64>>,
}

/// Samples `signal` every `1 / rate` time units on `[0, t_end]`.
pub fn sample_signal(
    signal: &PiecewiseConstantSignal,
    rate: f64,
    t_end: f64,
) -> Result<IrregularSeries> {
    if !(rate > 0.0) || !rate.is_finite() || !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(invalid("sampling rate must be > 0 and t_end >= 0"));
    }
    let n = (t_end * rate + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / rate).collect();
    let values = times.iter().map(|&t| signal.level(t).to_vec()).collect();
    IrregularSeries::new(values, Some(times), 0.0)
}

/// Network ODE trajectories (`H × T`) from `x0`, each input sample held until
/// the next timestamp. Timestamps must start at 0.
pub fn simulate_ode(
    net: &ClosedFormNetwork,
    inputs: &IrregularSeries,
    cfg: &SolverConfig,
    form: RhsForm,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let times = inputs
        .timestamps
        .as_ref()
        .ok_or_else(|| invalid("ODE simulation needs timestamps"))?;
    if times.is_empty() {
        return Err(invalid("ODE simulation needs at least one sample"));
    }
    if times[0] != 0.0 {
        return Err(invalid("ODE simulation timestamps must start at 0"));
    }
    if inputs.dims() != net.n_inputs() {
        return Err(invalid(format!(
            "network expects {} inputs, series has {}",
            net.n_inputs(),
            inputs.dims()
        )));
    }
    let signal = PiecewiseConstantSignal::new(times.clone(), inputs.values.clone())?;
    let mut ode = vec![Vec::with_capacity(times.len()); net.n_hidden()];
    let t_end = *times.last().unwrap_or(&0.0);
    if t_end > 0.0 {
        let traj = solve_ivp(
            &NetworkOde::new(net, form),
            &net.spec.x0,
            &signal,
            t_end,
            cfg,
        )?;
        for &t in times {
            for (row, v) in ode.iter_mut().zip(traj.sample(t)) {
                row.push(v);
            }
        }
    } else {
        for (row, &v) in ode.iter_mut().zip(&net.spec.x0) {
            row.push(v);
        }
    }
    Ok(ode)
}

/// Dual simulation with the symmetric right-hand side.
pub fn verify_fidelity(
    spec: &LtcNetworkSpec,
    inputs: &IrregularSeries,
    cfg: &SolverConfig,
) -> Result<FidelityReport> {
    verify_compiled(&compile(spec)?, inputs, cfg, RhsForm::Symmetric)
}

/// Simulates the network ODE from `x0` with each input sample held until the
/// next timestamp, and compares it with the compiled network evaluated at the
/// same (elapsed) times. Timestamps must start at 0.
pub fn verify_compiled(
    net: &ClosedFormNetwork,
    inputs: &IrregularSeries,
    cfg: &SolverConfig,
    form: RhsForm,
) -> Result<FidelityReport> {
    let times = inputs
        .timestamps
        .as_ref()
        .ok_or_else(|| invalid("fidelity check needs timestamps"))?;
    let ode = simulate_ode(net, inputs, cfg, form)?;
    let compiled = net.evaluate(inputs, times, CompiledTime::Elapsed)?;
    let h = net.n_hidden();
    let per_neuron_mse: Vec<f64> = ode
        .iter()
        .zip(&compiled)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64)
        .collect();
    let aggregate_mse = if h == 0 {
        0.0
    } else {
        per_neuron_mse.iter().sum::<f64>() / h as f64
    };
    Ok(FidelityReport {
        per_neuron_mse,
        aggregate_mse,
        ode,
        compiled,
    })
}
