//! Explicit Euler, classic RK4 and adaptive Dormand–Prince 5(4).
//!
//! Integration restarts at every signal breakpoint so each step sees a
//! constant input.

use serde::{Deserialize, Serialize};

use super::PiecewiseConstantSignal;
use crate::error::{invalid, Error, Result};

/// A first-order system `dx/dt = rhs(t, x, input)` with input held constant
/// over each integration segment.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], input: &[f64], dx: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    Euler,
    Rk4,
    DopriAdaptive,
}

impl SolverMethod {
    /// Right-hand-side evaluations per fixed step (first-same-as-last
    /// ignored for Dormand–Prince).
    pub fn stages(self) -> usize {
        match self {
            SolverMethod::Euler => 1,
            SolverMethod::Rk4 => 4,
            SolverMethod::DopriAdaptive => 7,
        }
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            "dopri" | "dopri5" | "dopri-adaptive" => Ok(Self::DopriAdaptive),
            other => Err(invalid(format!("unknown solver method '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Fixed step for Euler and RK4.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl SolverConfig {
    const DEFAULT_MAX_STEPS: usize = 50_000_000;

    pub fn euler(step: f64) -> Self {
        Self {
            method: SolverMethod::Euler,
            step,
            ..Self::dopri(1e-6, 1e-9)
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: SolverMethod::Rk4,
            step,
            ..Self::dopri(1e-6, 1e-9)
        }
    }

    pub fn dopri(rtol: f64, atol: f64) -> Self {
        Self {
            method: SolverMethod::DopriAdaptive,
            step: 1e-3,
            rtol,
            atol,
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(invalid(format!(
                "solver step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(invalid("solver tolerances must be > 0"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be > 0"));
        }
        Ok(())
    }
}

/// Solver output: every accepted step plus every breakpoint, in time order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `times.len() × dim`.
    pub states: Vec<f64>,
}

impl Trajectory {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, x: &[f64]) {
        // a breakpoint that coincides with the previous step end is stored once
        if self.times.last() == Some(&t) {
            let n = self.states.len();
            self.states[n - self.dim..].copy_from_slice(x);
            return;
        }
        self.times.push(t);
        self.states.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Linear interpolation between recorded points (exact at recorded
    /// times, clamped outside the recorded range).
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return self.state(0).to_vec();
        }
        if i == self.len() || self.times[i - 1] == t {
            return self.state(i - 1).to_vec();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        self.state(i - 1)
            .iter()
            .zip(self.state(i))
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Counters carried across segments.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Current adaptive step proposal; zero means "not yet chosen".
    pub h: f64,
    err_prev: f64,
}

/// Integrates `x` in place from `t0` to `t1` with `input` held constant,
/// calling `on_step` after every accepted step.
#[allow(clippy::too_many_arguments)]
pub fn advance(
    system: &dyn OdeSystem,
    x: &mut [f64],
    input: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    stats: &mut SolverStats,
    on_step: &mut dyn FnMut(f64, &[f64]),
) -> Result<()> {
    if t1 <= t0 {
        return Ok(());
    }
    match cfg.method {
        SolverMethod::Euler | SolverMethod::Rk4 => {
            fixed_steps(system, x, input, t0, t1, cfg, stats, on_step)
        }
        SolverMethod::DopriAdaptive => dopri(system, x, input, t0, t1, cfg, stats, on_step),
    }
}

/// Solves from `x0` at `t = 0` to `t_end` under a piecewise-constant input.
pub fn solve_ivp(
    system: &dyn OdeSystem,
    x0: &[f64],
    signal: &PiecewiseConstantSignal,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid(format!("t_end must be > 0, got {t_end}")));
    }
    cfg.validate()?;
    if x0.len() != system.dim() {
        return Err(Error::ShapeMismatch {
            op: "solve_ivp",
            lhs: vec![x0.len()],
            rhs: vec![system.dim()],
        });
    }
    let mut traj = Trajectory::new(system.dim());
    let mut x = x0.to_vec();
    traj.push(0.0, &x);
    let mut stats = SolverStats {
        h: 1e-3 * t_end,
        ..SolverStats::default()
    };
    let bps = signal.breakpoints();
    for (k, level) in signal.levels().iter().enumerate() {
        let start = bps[k];
        if start >= t_end {
            break;
        }
        let stop = bps.get(k + 1).copied().unwrap_or(t_end).min(t_end);
        advance(
            system,
            &mut x,
            level,
            start,
            stop,
            cfg,
            &mut stats,
            &mut |t, s| traj.push(t, s),
        )?;
        traj.push(stop, &x);
    }
    Ok(traj)
}

fn check_state(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: "solve_ivp" })
    }
}

#[allow(clippy::too_many_arguments)]
fn fixed_steps(
    system: &dyn OdeSystem,
    x: &mut [f64],
    input: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    stats: &mut SolverStats,
    on_step: &mut dyn FnMut(f64, &[f64]),
) -> Result<()> {
    let n = ((t1 - t0) / cfg.step - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let d = x.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for i in 0..n {
        if stats.steps >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t: t0 + i as f64 * h,
            });
        }
        let t = t0 + i as f64 * h;
        match cfg.method {
            SolverMethod::Euler => {
                system.rhs(t, x, input, &mut k1);
                for (xi, ki) in x.iter_mut().zip(&k1) {
                    *xi += h * ki;
                }
                stats.rhs_evals += 1;
            }
            _ => {
                system.rhs(t, x, input, &mut k1);
                for j in 0..d {
                    tmp[j] = x[j] + 0.5 * h * k1[j];
                }
                system.rhs(t + 0.5 * h, &tmp, input, &mut k2);
                for j in 0..d {
                    tmp[j] = x[j] + 0.5 * h * k2[j];
                }
                system.rhs(t + 0.5 * h, &tmp, input, &mut k3);
                for j in 0..d {
                    tmp[j] = x[j] + h * k3[j];
                }
                system.rhs(t + h, &tmp, input, &mut k4);
                for j in 0..d {
                    x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
                stats.rhs_evals += 4;
            }
        }
        stats.steps += 1;
        check_state(x)?;
        let t_next = if i + 1 == n {
            t1
        } else {
            t0 + (i + 1) as f64 * h
        };
        on_step(t_next, x);
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 5th-order minus embedded 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[allow(clippy::too_many_arguments)]
fn dopri(
    system: &dyn OdeSystem,
    x: &mut [f64],
    input: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    stats: &mut SolverStats,
    on_step: &mut dyn FnMut(f64, &[f64]),
) -> Result<()> {
    let d = x.len();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    if !(stats.h > 0.0) {
        stats.h = 1e-3 * (t1 - t0);
    }
    if stats.err_prev == 0.0 {
        stats.err_prev = 1e-4;
    }
    let mut t = t0;
    system.rhs(t, x, input, &mut k[0]);
    stats.rhs_evals += 1;

    while t < t1 {
        if stats.steps + stats.rejected >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t,
            });
        }
        let remaining = t1 - t;
        let last = stats.h * 1.01 >= remaining;
        let h = if last { remaining } else { stats.h };
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }

        let stage = |tmp: &mut [f64], x: &[f64], k: &[Vec<f64>; 7], coeffs: &[(usize, f64)]| {
            for j in 0..d {
                let mut acc = 0.0;
                for &(s, c) in coeffs {
                    acc += c * k[s][j];
                }
                tmp[j] = x[j] + h * acc;
            }
        };
        stage(&mut tmp, x, &k, &[(0, A21)]);
        system.rhs(t + C2 * h, &tmp, input, &mut k[1]);
        stage(&mut tmp, x, &k, &[(0, A31), (1, A32)]);
        system.rhs(t + C3 * h, &tmp, input, &mut k[2]);
        stage(&mut tmp, x, &k, &[(0, A41), (1, A42), (2, A43)]);
        system.rhs(t + C4 * h, &tmp, input, &mut k[3]);
        stage(&mut tmp, x, &k, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
        system.rhs(t + C5 * h, &tmp, input, &mut k[4]);
        stage(
            &mut tmp,
            x,
            &k,
            &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)],
        );
        system.rhs(t + h, &tmp, input, &mut k[5]);
        stage(
            &mut y_new,
            x,
            &k,
            &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)],
        );
        system.rhs(t + h, &y_new, input, &mut k[6]);
        stats.rhs_evals += 6;

        let mut err_sq = 0.0;
        for j in 0..d {
            let e = h
                * (E1 * k[0][j]
                    + E3 * k[2][j]
                    + E4 * k[3][j]
                    + E5 * k[4][j]
                    + E6 * k[5][j]
                    + E7 * k[6][j]);
            let scale = cfg.atol + cfg.rtol * x[j].abs().max(y_new[j].abs());
            err_sq += (e / scale).powi(2);
        }
        let err = (err_sq / d.max(1) as f64).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            stats.h = h * FAC_MIN;
            continue;
        }

        if err <= 1.0 {
            let fac = (SAFETY * err.max(1e-10).powf(-ALPHA) * stats.err_prev.powf(BETA))
                .clamp(FAC_MIN, FAC_MAX);
            stats.err_prev = err.max(1e-4);
            t = if last { t1 } else { t + h };
            x.copy_from_slice(&y_new);
            check_state(x)?;
            k.swap(0, 6);
            stats.steps += 1;
            on_step(t, x);
            // a truncated final step says nothing about the next proposal
            if !last {
                stats.h = h * fac;
            }
        } else {
            stats.rejected += 1;
            stats.h = h * (SAFETY * err.powf(-ALPHA)).max(FAC_MIN);
        }
    }
    Ok(())
}
