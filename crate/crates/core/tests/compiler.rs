use cfc_core::compiler::{CompiledTime, SynapseParams, SPEC_VERSION};
use cfc_core::models::IrregularSeries;
use cfc_core::{
    compile, error_bound, exact_piecewise, sample_signal, verify_fidelity, ClosedFormNetwork,
    Error, LtcNetworkSpec, LtcScalarParams, PiecewiseConstantSignal, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two hidden neurons and one input: input → x1, input → x2, x1 → x2,
/// x2 → x1 and the self-loop x2 → x2.
fn two_neuron_fixture(seed: u64) -> LtcNetworkSpec {
    LtcNetworkSpec::random(1, 2, &[(1, 0), (2, 0), (2, 1), (1, 2), (2, 2)], seed).unwrap()
}

fn single_neuron(sigma: f64, mu: f64, a: f64, tau: f64, x0: f64) -> LtcNetworkSpec {
    LtcNetworkSpec {
        version: SPEC_VERSION,
        n_inputs: 1,
        n_hidden: 1,
        adjacency: vec![vec![0, 0], vec![1, 0]],
        synapses: vec![SynapseParams {
            i: 1,
            j: 0,
            sigma,
            mu,
            a,
        }],
        tau: vec![tau],
        x0: vec![x0],
    }
}

fn random_signal(
    rng: &mut ChaCha8Rng,
    channels: usize,
    t_end: f64,
    segments: usize,
) -> PiecewiseConstantSignal {
    let mut bps: Vec<f64> = (1..segments)
        .map(|_| (rng.gen_range(0.0..t_end) * 100.0).round() / 100.0)
        .collect();
    bps.push(0.0);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let levels = bps
        .iter()
        .map(|_| (0..channels).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    PiecewiseConstantSignal::new(bps, levels).unwrap()
}

#[test]
fn two_neuron_network_compiles_and_evaluates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..20 {
        let spec = two_neuron_fixture(seed);
        let net = compile(&spec).unwrap();
        assert_eq!(
            (net.n_inputs(), net.n_hidden(), net.synapse_count()),
            (1, 2, 5)
        );
        let series = sample_signal(&random_signal(&mut rng, 1, 5.0, 6), 20.0, 5.0).unwrap();
        let times = series.timestamps.clone().unwrap();
        let out = net
            .evaluate(&series, &times, CompiledTime::Elapsed)
            .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().flatten().all(|v| v.is_finite()));
        let report = verify_fidelity(&spec, &series, &SolverConfig::dopri(1e-8, 1e-10)).unwrap();
        assert!(report.aggregate_mse.is_finite());
    }
}

#[test]
fn compilation_copies_parameters() {
    let spec = two_neuron_fixture(9);
    let net = compile(&spec).unwrap();
    assert_eq!(net.spec(), &spec);
    let again = compile(net.spec()).unwrap();
    assert_eq!(again.to_json().unwrap(), net.to_json().unwrap());
    let back = ClosedFormNetwork::from_json(&net.to_json().unwrap()).unwrap();
    assert_eq!(back.spec(), &spec);
    assert_eq!(
        LtcNetworkSpec::from_json(&spec.to_json().unwrap()).unwrap(),
        spec
    );
    // A spec is not a compiled network and vice versa.
    assert!(ClosedFormNetwork::from_json(&spec.to_json().unwrap()).is_err());
}

#[test]
fn dangling_synapse_names_its_indices() {
    let mut spec = two_neuron_fixture(1);
    spec.synapses.retain(|s| !(s.i == 2 && s.j == 1));
    match compile(&spec) {
        Err(Error::DanglingSynapse { i, j }) => assert_eq!((i, j), (2, 1)),
        other => panic!("expected a dangling synapse, got {other:?}"),
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let base = single_neuron(1.0, 0.0, 0.5, 1.0, 0.0);
    let mut bad = base.clone();
    bad.tau[0] = 0.0;
    assert!(compile(&bad).is_err());
    let mut bad = base.clone();
    bad.adjacency[0][0] = 1;
    bad.synapses.push(SynapseParams {
        i: 0,
        j: 0,
        sigma: 1.0,
        mu: 0.0,
        a: 0.0,
    });
    assert!(compile(&bad).is_err(), "input-to-input synapse");
    let mut bad = base.clone();
    bad.x0.push(0.0);
    assert!(compile(&bad).is_err());
    let mut bad = base;
    bad.version = 99;
    assert!(compile(&bad).is_err());
}

#[test]
fn single_neuron_error_stays_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (sigma, a, tau, x0) = (
            rng.gen_range(0.5..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.5..3.0),
            rng.gen_range(-1.0..1.0),
        );
        let net = compile(&single_neuron(sigma, 0.0, a, tau, x0)).unwrap();
        let signal = random_signal(&mut rng, 1, 5.0, 8);
        let series = sample_signal(&signal, 10.0, 5.0).unwrap();
        let times = series.timestamps.clone().unwrap();
        let out = net
            .evaluate(&series, &times, CompiledTime::Elapsed)
            .unwrap();
        let params = LtcScalarParams::new(x0, a, 1.0 / tau, sigma, 0.0).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let exact = exact_piecewise(&params, &signal, t).unwrap();
            assert!((exact - out[0][k]).abs() <= error_bound(&params, t) + 1e-12);
        }
    }
}

#[test]
fn first_column_has_no_decay() {
    let spec = two_neuron_fixture(3);
    let net = compile(&spec).unwrap();
    let input = 0.8;
    let series = IrregularSeries::new(vec![vec![input]], Some(vec![0.0]), 0.0).unwrap();
    let out = net
        .evaluate(&series, &[0.0], CompiledTime::Elapsed)
        .unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for (h, row) in out.iter().enumerate() {
        let i = h + 1;
        let expected: f64 = spec
            .synapses
            .iter()
            .filter(|s| s.i == i)
            .map(|s| {
                let pre = if s.j == 0 { input } else { spec.x0[s.j - 1] };
                (spec.x0[h] - s.a) * sig(-s.sigma * (pre - s.mu)) + s.a
            })
            .sum();
        assert!((row[0] - expected).abs() < 1e-14);
    }
}

#[test]
fn degenerate_networks_are_constant() {
    let mut spec = two_neuron_fixture(6);
    for s in spec.synapses.iter_mut() {
        s.a = spec.x0[s.i - 1];
    }
    let net = compile(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let series = sample_signal(&random_signal(&mut rng, 1, 3.0, 4), 10.0, 3.0).unwrap();
    let times = series.timestamps.clone().unwrap();
    let out = net
        .evaluate(&series, &times, CompiledTime::Elapsed)
        .unwrap();
    // x1 has two incoming synapses, x2 has three.
    for (h, fan_in) in [(0, 2.0), (1, 3.0)] {
        assert!(out[h]
            .iter()
            .all(|&v| (v - fan_in * spec.x0[h]).abs() < 1e-14));
    }

    let empty = LtcNetworkSpec::random(1, 3, &[], 0).unwrap();
    let out = compile(&empty)
        .unwrap()
        .evaluate(&series, &times, CompiledTime::Elapsed)
        .unwrap();
    assert!(out.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn time_vector_must_increase() {
    let net = compile(&two_neuron_fixture(0)).unwrap();
    let series = IrregularSeries::new(vec![vec![0.0]; 3], None, 0.0).unwrap();
    assert!(net
        .evaluate(&series, &[0.0, 0.5, 0.5], CompiledTime::Elapsed)
        .is_err());
    assert!(net
        .evaluate(&series, &[0.0, 0.5], CompiledTime::Elapsed)
        .is_err());
    assert!(net
        .evaluate(&series, &[0.3, 0.7, 2.0], CompiledTime::Elapsed)
        .is_ok());
}

#[test]
fn single_feedforward_neuron_tracks_its_ode() {
    // Unit leak, 100 Hz piecewise input over [0, 10].
    let spec = single_neuron(1.0, 0.0, 0.4, 1.0, 0.0);
    let bps: Vec<f64> = (0..1000).map(|k| k as f64 / 100.0).collect();
    let levels = bps.iter().map(|&t| (2.0 * t).sin()).collect();
    let signal = PiecewiseConstantSignal::scalar(bps, levels).unwrap();
    let series = sample_signal(&signal, 100.0, 10.0).unwrap();
    let report = verify_fidelity(&spec, &series, &SolverConfig::rk4(1e-3)).unwrap();
    assert!(report.aggregate_mse <= 0.01, "mse {}", report.aggregate_mse);
}
