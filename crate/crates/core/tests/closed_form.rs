mod common;

use cfc_core::closed_form::SharpnessProbe;
use cfc_core::{
    closed_form_scalar, error_bound, exact_piecewise, sharpness_inf, sharpness_sup, LtcScalarParams,
};
use common::{quadrature_exact, random_instance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn probe(c: f64, delta: f64, t: f64, x0: f64) -> SharpnessProbe {
    SharpnessProbe {
        c,
        delta,
        t,
        params: LtcScalarParams::new(x0, 0.0, 1.0, 1.0, 0.0).unwrap(),
    }
}

#[test]
fn error_stays_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng, 5.0);
        for k in 0..50 {
            let t = 5.0 * k as f64 / 49.0;
            let input = inst.signal.scalar_level(t);
            let approx = closed_form_scalar(&inst.params, input, t).unwrap();
            let exact = quadrature_exact(&inst, t, 2);
            assert!((exact - approx).abs() <= error_bound(&inst.params, t) + 1e-9);
        }
    }
}

#[test]
fn normalized_error_is_bracketed() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let mut inst = random_instance(&mut rng, 5.0);
        if inst.params.x0 == inst.params.a {
            inst.params.x0 += 1.0;
        }
        for k in 1..50 {
            let t = 0.1 * k as f64;
            let p = &inst.params;
            let exact = exact_piecewise(p, &inst.signal, t).unwrap();
            let approx = closed_form_scalar(p, inst.signal.scalar_level(t), t).unwrap();
            let r = (exact - approx) / ((p.x0 - p.a) * (-p.w_tau * t).exp());
            assert!(
                r >= (-t).exp() - 1.0 - 1e-12 && r <= 1.0 + 1e-12,
                "ratio {r} at t = {t}"
            );
        }
    }
}

#[test]
fn reference_values() {
    let p = LtcScalarParams::new(1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
    let approx = closed_form_scalar(&p, 0.0, 1.0).unwrap();
    assert!((approx - (-1.5f64).exp() * 0.5).abs() < 1e-15);
    assert!((approx - 0.11157).abs() < 1e-5);
    assert!((error_bound(&p, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
    // t = 0 leaves only the f(-I) scaling.
    let q = LtcScalarParams::new(2.0, 0.5, 0.3, 2.0, 0.1).unwrap();
    let at_zero = closed_form_scalar(&q, 0.7, 0.0).unwrap();
    assert!((at_zero - (1.5 * q.f(-0.7) + 0.5)).abs() < 1e-15);
    let rest = LtcScalarParams::new(0.4, 0.4, 1.0, 1.0, 0.0).unwrap();
    assert_eq!(closed_form_scalar(&rest, 3.0, 2.0).unwrap(), 0.4);
    assert_eq!(error_bound(&rest, 2.0), 0.0);
    let no_leak = LtcScalarParams::new(1.0, -1.0, 0.0, 1.0, 0.0).unwrap();
    assert_eq!(error_bound(&no_leak, 7.0), 2.0);
    assert!(closed_form_scalar(&p, 0.0, -1.0).is_err());
    assert!(closed_form_scalar(&p, f64::NAN, 1.0).is_err());
}

#[test]
fn sharpness_limits() {
    let floor = (-1.0f64).exp() - 1.0;
    let p = probe(50.0, 1e-3, 1.0, 1.0);
    assert!(sharpness_sup(&p).unwrap() >= 0.99);
    let inf = sharpness_inf(&p).unwrap();
    assert!(inf >= floor && inf <= floor + 0.02, "inf ratio {inf}");
    // A wide terminal segment stays short of the supremum.
    let wide = probe(5.0, 0.5, 1.0, 1.0);
    assert!(sharpness_sup(&wide).unwrap() < 1.0);
}

#[test]
fn sharpness_probe_validation() {
    assert!(
        sharpness_sup(&probe(50.0, 1e-3, 1.0, 0.0)).is_err(),
        "x0 == A"
    );
    assert!(
        sharpness_sup(&probe(1.0, 1e-3, 1.0, 1.0)).is_err(),
        "C too small"
    );
    assert!(
        sharpness_sup(&probe(50.0, 1.0, 1.0, 1.0)).is_err(),
        "delta >= t"
    );
    assert!(sharpness_inf(&probe(-50.0, 1e-3, 1.0, 1.0)).is_err());
}

#[test]
fn inf_ratio_vanishes_with_horizon() {
    let r = sharpness_inf(&probe(50.0, 1e-6, 1e-4, 1.0)).unwrap();
    assert!(r.abs() < 1e-3, "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn inf_ratio_respects_floor(c in 5.0f64..80.0, frac in 0.001f64..0.9, t in 0.05f64..5.0, x0 in 0.1f64..3.0) {
        let ratio = sharpness_inf(&probe(c, frac * t, t, x0)).unwrap();
        prop_assert!(ratio >= (-t).exp() - 1.0 - 1e-12);
        let sup = sharpness_sup(&probe(c, frac * t, t, x0)).unwrap();
        prop_assert!(sup <= 1.0 + 1e-12);
    }

    #[test]
    fn bound_decays(w_tau in 0.01f64..3.0, t1 in 0.0f64..5.0, dt in 0.01f64..5.0) {
        let p = LtcScalarParams::new(1.0, -0.5, w_tau, 1.0, 0.0).unwrap();
        prop_assert!(error_bound(&p, t1 + dt) < error_bound(&p, t1));
    }
}
