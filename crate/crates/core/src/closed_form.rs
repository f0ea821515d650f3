//! Solver-free approximation of the scalar LTC neuron and its worst-case
//! error.
//!
//! The approximation replaces `∫₀ᵗ f(I(s)) ds` by `f(I(t))·t` and scales the
//! transient by `f(-I(t))`:
//!
//! ```text
//! x̃(t) = (x0 - A) · e^{-[w_tau + f(I(t))]·t} · f(-I(t)) + A
//! ```
//!
//! For any input, `|x(t) - x̃(t)| <= |x0 - A| · e^{-w_tau t}`, and the
//! normalised error `(x - x̃) / ((x0 - A) e^{-w_tau t})` ranges over
//! `[e^{-t} - 1, 1]`. Both ends are approached by two-segment ±C inputs,
//! built by [`sharpness_sup`] and [`sharpness_inf`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ltc::{exact_piecewise, LtcScalarParams, PiecewiseConstantSignal};

/// Approximate state at time `t` given the instantaneous input `input_t`.
pub fn closed_form_scalar(params: &LtcScalarParams, input_t: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !input_t.is_finite() {
        return Err(invalid(format!(
            "closed_form_scalar needs finite input and t >= 0 (got I = {input_t}, t = {t})"
        )));
    }
    let c = params.x0 - params.a;
    let decay = (-(params.w_tau + params.f(input_t)) * t).exp();
    Ok(c * decay * params.f(-input_t) + params.a)
}

/// `|x0 - A| · e^{-w_tau t}`.
pub fn error_bound(params: &LtcScalarParams, t: f64) -> f64 {
    (params.x0 - params.a).abs() * (-params.w_tau * t).exp()
}

/// Inputs for the sharpness constructions: a signal at `-C` that switches to
/// `+C` for the final `delta` of the horizon `t` (or its negation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessProbe {
    pub c: f64,
    pub delta: f64,
    pub t: f64,
    pub params: LtcScalarParams,
}

/// Largest `f(-C)` (and `1 - f(C)`) a probe may leave.
pub const SHARPNESS_EPSILON: f64 = 0.01;

impl SharpnessProbe {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.c > 0.0) {
            return Err(invalid(format!(
                "probe magnitude C must be > 0, got {}",
                self.c
            )));
        }
        if !(self.delta > 0.0 && self.delta < self.t) {
            return Err(invalid(format!(
                "probe needs 0 < delta < t (delta = {}, t = {})",
                self.delta, self.t
            )));
        }
        let (lo, hi) = (self.params.f(-self.c), self.params.f(self.c));
        if lo > SHARPNESS_EPSILON || hi < 1.0 - SHARPNESS_EPSILON {
            return Err(invalid(format!(
                "C = {} too small: f(-C) = {lo}, f(C) = {hi}",
                self.c
            )));
        }
        if self.params.x0 == self.params.a {
            return Err(invalid("normalised error undefined for x0 == A"));
        }
        Ok(())
    }

    /// `first` on `[0, t - delta]`, `last` on `(t - delta, t]`.
    fn signal(&self, first: f64, last: f64) -> Result<PiecewiseConstantSignal> {
        PiecewiseConstantSignal::scalar(vec![0.0, self.t - self.delta], vec![first, last])
    }

    fn normalized_error(&self, first: f64, last: f64) -> Result<f64> {
        self.validate()?;
        let signal = self.signal(first, last)?;
        let exact = exact_piecewise(&self.params, &signal, self.t)?;
        let approx = closed_form_scalar(&self.params, last, self.t)?;
        let scale = (self.params.x0 - self.params.a) * (-self.params.w_tau * self.t).exp();
        Ok((exact - approx) / scale)
    }
}

/// Normalised error under the `-C → +C` input; tends to 1.
pub fn sharpness_sup(probe: &SharpnessProbe) -> Result<f64> {
    probe.normalized_error(-probe.c, probe.c)
}

/// Normalised error under the `+C → -C` input; tends to `e^{-t} - 1`.
pub fn sharpness_inf(probe: &SharpnessProbe) -> Result<f64> {
    probe.normalized_error(probe.c, -probe.c)
}
