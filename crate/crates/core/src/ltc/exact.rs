use super::{LtcScalarParams, PiecewiseConstantSignal};
use crate::error::{invalid, Result};

/// `∫₀ᵗ f(I(s)) ds` for a piecewise-constant input, using the first channel.
pub fn input_integral(params: &LtcScalarParams, signal: &PiecewiseConstantSignal, t: f64) -> f64 {
    let bps = signal.breakpoints();
    let levels = signal.levels();
    let k = signal.segment_index(t);
    let full: f64 = (0..k)
        .map(|i| params.f(levels[i][0]) * (bps[i + 1] - bps[i]))
        .sum();
    full + params.f(levels[k][0]) * (t - bps[k])
}

/// Exact state of the symmetric-form scalar LTC neuron at time `t`:
/// `(x0 - A) e^{-w_tau t} e^{-∫₀ᵗ f(I)} + A`.
pub fn exact_piecewise(
    params: &LtcScalarParams,
    signal: &PiecewiseConstantSignal,
    t: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("exact_piecewise needs t >= 0, got {t}")));
    }
    let exponent = -params.w_tau * t - input_integral(params, signal, t);
    Ok((params.x0 - params.a) * exponent.exp() + params.a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(x0: f64, a: f64, w_tau: f64) -> LtcScalarParams {
        LtcScalarParams::new(x0, a, w_tau, 1.0, 0.0).unwrap()
    }

    #[test]
    fn starts_at_x0() {
        let s = PiecewiseConstantSignal::scalar(vec![0.0, 0.3], vec![2.0, -4.0]).unwrap();
        let p = params(1.25, -0.5, 0.7);
        assert_eq!(exact_piecewise(&p, &s, 0.0).unwrap(), 1.25);
    }

    #[test]
    fn fixed_point_stays() {
        let s = PiecewiseConstantSignal::scalar(vec![0.0, 1.0, 2.0], vec![5.0, -3.0, 0.1]).unwrap();
        let p = params(2.0, 2.0, 0.4);
        for t in [0.0, 0.5, 1.0, 3.7] {
            assert_eq!(exact_piecewise(&p, &s, t).unwrap(), 2.0);
        }
    }

    #[test]
    fn single_level_value() {
        // f(0) = 0.5 → x(1) = e^{-1.5}
        let s = PiecewiseConstantSignal::scalar(vec![0.0], vec![0.0]).unwrap();
        let p = params(1.0, 0.0, 1.0);
        let x = exact_piecewise(&p, &s, 1.0).unwrap();
        assert!((x - (-1.5f64).exp()).abs() < 1e-15);
        assert!((x - 0.22313).abs() < 1e-5);
    }

    #[test]
    fn negative_time_is_an_error() {
        let s = PiecewiseConstantSignal::scalar(vec![0.0], vec![0.0]).unwrap();
        assert!(exact_piecewise(&params(1.0, 0.0, 1.0), &s, -0.1).is_err());
    }

    #[test]
    fn continuous_across_breakpoints() {
        let s = PiecewiseConstantSignal::scalar(vec![0.0, 0.7, 1.9], vec![-2.0, 4.0, 0.5]).unwrap();
        let p = params(3.0, -1.0, 0.6);
        for &b in &s.breakpoints()[1..] {
            let left = exact_piecewise(&p, &s, b - 1e-13).unwrap();
            let right = exact_piecewise(&p, &s, b).unwrap();
            assert!((left - right).abs() <= 1e-12, "{left} vs {right}");
        }
    }
}
