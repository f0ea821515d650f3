//! Ground-truth LTC neuron dynamics.
//!
//! A single LTC unit evolves as
//!
//! ```text
//! dx/dt = -(w_tau + f(x, I)) * x + A * f(x, I)                (Ltc form)
//! dx/dt = -(w_tau + f(x, I)) * x + A * (w_tau + f(x, I))      (Symmetric form)
//! ```
//!
//! with a sigmoidal conductance `f`. The symmetric form has the exact
//! solution implemented in [`exact_piecewise`] for piecewise-constant inputs.

mod exact;
mod signal;
mod solver;

use serde::{Deserialize, Serialize};

pub use exact::{exact_piecewise, input_integral};
pub use signal::PiecewiseConstantSignal;
pub use solver::{
    advance, solve_ivp, OdeSystem, SolverConfig, SolverMethod, SolverStats, Trajectory,
};

use crate::autodiff::sigmoid;
use crate::error::{invalid, Error, Result};

/// Which right-hand side the solvers integrate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhsForm {
    /// `-(w_tau + f) x + A f`
    Ltc,
    /// `-(w_tau + f) x + A (w_tau + f)`; rest state is exactly `A`.
    #[default]
    Symmetric,
}

/// A single LTC neuron driven by a one-dimensional input through
/// `f(v) = 1 / (1 + exp(-sigma (v - mu)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtcScalarParams {
    pub x0: f64,
    pub a: f64,
    pub w_tau: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl LtcScalarParams {
    pub fn new(x0: f64, a: f64, w_tau: f64, sigma: f64, mu: f64) -> Result<Self> {
        let p = Self {
            x0,
            a,
            w_tau,
            sigma,
            mu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x0, self.a, self.w_tau, self.sigma, self.mu];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("LTC parameters must be finite"));
        }
        if self.w_tau < 0.0 {
            return Err(invalid(format!("w_tau must be >= 0, got {}", self.w_tau)));
        }
        if self.sigma <= 0.0 {
            return Err(invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// The conductance nonlinearity evaluated at input `v`.
    pub fn f(&self, v: f64) -> f64 {
        sigmoid(self.sigma * (v - self.mu))
    }

    /// Lipschitz constant of `f`.
    pub fn lipschitz(&self) -> f64 {
        self.sigma / 4.0
    }

    /// The equivalent one-unit layer (no self connection).
    pub fn to_layer(&self) -> LtcLayerParams {
        LtcLayerParams {
            inputs: 1,
            units: 1,
            x0: vec![self.x0],
            a: vec![self.a],
            w_tau: vec![self.w_tau],
            w_in: vec![self.sigma],
            w_rec: vec![0.0],
            bias: vec![-self.sigma * self.mu],
        }
    }
}

/// A layer of LTC units with `f(x, I) = sigmoid(I·W_in + x·W_rec + b)`.
///
/// `w_in` is `inputs × units` and `w_rec` is `units × units`, both
/// row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtcLayerParams {
    pub inputs: usize,
    pub units: usize,
    pub x0: Vec<f64>,
    pub a: Vec<f64>,
    pub w_tau: Vec<f64>,
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LtcLayerParams {
    pub fn validate(&self) -> Result<()> {
        let (m, d) = (self.inputs, self.units);
        let checks = [
            ("x0", self.x0.len(), d),
            ("a", self.a.len(), d),
            ("w_tau", self.w_tau.len(), d),
            ("w_in", self.w_in.len(), m * d),
            ("w_rec", self.w_rec.len(), d * d),
            ("bias", self.bias.len(), d),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(invalid(format!(
                    "{name}: expected {want} entries, got {got}"
                )));
            }
        }
        if self.w_tau.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("w_tau entries must be >= 0"));
        }
        Ok(())
    }

    /// Conductances `f(x, I)` for every unit.
    pub fn conductance(&self, x: &[f64], input: &[f64], out: &mut [f64]) {
        let d = self.units;
        out.copy_from_slice(&self.bias);
        for (i, &iv) in input.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.w_in[i * d..(i + 1) * d]) {
                *o += iv * w;
            }
        }
        for (j, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.w_rec[j * d..(j + 1) * d]) {
                *o += xv * w;
            }
        }
        for o in out.iter_mut() {
            *o = sigmoid(*o);
        }
    }
}

/// `dx/dt` of an LTC layer.
pub fn ltc_rhs(
    x: &[f64],
    input: &[f64],
    params: &LtcLayerParams,
    _t: f64,
    form: RhsForm,
) -> Result<Vec<f64>> {
    if x.len() != params.units || input.len() != params.inputs {
        return Err(Error::ShapeMismatch {
            op: "ltc_rhs",
            lhs: vec![x.len(), input.len()],
            rhs: vec![params.units, params.inputs],
        });
    }
    let mut out = vec![0.0; params.units];
    LtcOde { params, form }.rhs(0.0, x, input, &mut out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite { op: "ltc_rhs" })
    }
}

/// An LTC layer viewed as an ODE system for the solvers.
#[derive(Clone, Copy, Debug)]
pub struct LtcOde<'a> {
    pub params: &'a LtcLayerParams,
    pub form: RhsForm,
}

impl OdeSystem for LtcOde<'_> {
    fn dim(&self) -> usize {
        self.params.units
    }

    fn rhs(&self, _t: f64, x: &[f64], input: &[f64], dx: &mut [f64]) {
        self.params.conductance(x, input, dx);
        let p = self.params;
        for i in 0..p.units {
            let f = dx[i];
            let decay = p.w_tau[i] + f;
            dx[i] = match self.form {
                RhsForm::Ltc => -decay * x[i] + p.a[i] * f,
                RhsForm::Symmetric => -decay * x[i] + p.a[i] * decay,
            };
        }
    }
}
