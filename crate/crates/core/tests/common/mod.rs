#![allow(dead_code)]

pub mod fd;

use cfc_core::{LtcScalarParams, PiecewiseConstantSignal};
use rand::Rng;

/// A random scalar neuron driven by a random piecewise-constant input with
/// 1–16 segments on `[0, horizon]` and levels in `[-5, 5]`.
pub struct Instance {
    pub params: LtcScalarParams,
    pub signal: PiecewiseConstantSignal,
}

pub fn random_instance(rng: &mut impl Rng, horizon: f64) -> Instance {
    let params = LtcScalarParams::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(0.1..3.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(-1.0..1.0),
    )
    .unwrap();
    let segments = rng.gen_range(1..=16);
    let mut cuts: Vec<f64> = (1..segments).map(|_| rng.gen_range(0.0..horizon)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut breakpoints = vec![0.0];
    breakpoints.extend(cuts.into_iter().filter(|&c| c > 0.0));
    let levels = breakpoints
        .iter()
        .map(|_| rng.gen_range(-5.0..5.0))
        .collect();
    Instance {
        params,
        signal: PiecewiseConstantSignal::scalar(breakpoints, levels).unwrap(),
    }
}

/// Independent reference for `(x0 - A) e^{-w_tau t - ∫ f(I)} + A`: the
/// integral by midpoint quadrature with `n` cells per segment.
pub fn quadrature_exact(inst: &Instance, t: f64, n: usize) -> f64 {
    let p = &inst.params;
    let f = |v: f64| 1.0 / (1.0 + (-p.sigma * (v - p.mu)).exp());
    let bps = inst.signal.breakpoints();
    let mut integral = 0.0;
    for k in 0..bps.len() {
        let lo = bps[k];
        let hi = bps.get(k + 1).copied().unwrap_or(f64::INFINITY).min(t);
        if hi <= lo {
            break;
        }
        let h = (hi - lo) / n as f64;
        for c in 0..n {
            integral += f(inst.signal.scalar_level(lo + (c as f64 + 0.5) * h)) * h;
        }
    }
    (p.x0 - p.a) * (-p.w_tau * t - integral).exp() + p.a
}
