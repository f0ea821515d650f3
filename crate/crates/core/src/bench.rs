//! Forward-pass timing of solver-based LTC networks against the compiled
//! closed form and the CfC cell.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Tensor};
use crate::compiler::{compile, ClosedFormNetwork, CompiledTime, LtcNetworkSpec, NetworkOde};
use crate::error::{invalid, Error, Result};
use crate::ltc::{advance, RhsForm, SolverConfig, SolverMethod, SolverStats};
use crate::models::{CfcModel, IrregularSeries, ModelConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    LtcEuler,
    LtcRk4,
    LtcDopri,
    ClosedForm,
    Cfc,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::LtcEuler => "ltc-euler",
            BenchMethod::LtcRk4 => "ltc-rk4",
            BenchMethod::LtcDopri => "ltc-dopri",
            BenchMethod::ClosedForm => "closed-form",
            BenchMethod::Cfc => "cfc",
        }
    }

    pub fn uses_solver(self) -> bool {
        matches!(
            self,
            BenchMethod::LtcEuler | BenchMethod::LtcRk4 | BenchMethod::LtcDopri
        )
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BenchMethod::LtcEuler,
            BenchMethod::LtcRk4,
            BenchMethod::LtcDopri,
            BenchMethod::ClosedForm,
            BenchMethod::Cfc,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| invalid(format!("unknown bench method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub hidden: Vec<usize>,
    pub lengths: Vec<usize>,
    pub methods: Vec<BenchMethod>,
    pub inputs: usize,
    /// Fixed solver steps between consecutive samples (Euler and RK4).
    pub steps_per_interval: usize,
    /// Hidden sources per LTC neuron; `None` wires every neuron to every
    /// other. Dense wiring at k = 64 is too stiff for 10 RK4 steps per unit
    /// interval, so sparse wiring is the default.
    #[serde(default)]
    pub fan_in: Option<usize>,
    pub reps: usize,
    /// Upper limit on inner repetitions when a single run is too fast to time.
    pub max_inner: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            lengths: vec![1000],
            methods: vec![BenchMethod::LtcRk4, BenchMethod::Cfc],
            inputs: 1,
            steps_per_interval: 10,
            fan_in: Some(8),
            reps: 10,
            max_inner: 1 << 16,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.methods.iter().any(|m| m.uses_solver())
            || self.methods.iter().all(|m| m.uses_solver())
        {
            return Err(invalid(
                "bench needs at least one LTC solver method and one closed-form or CfC method",
            ));
        }
        if self.hidden.contains(&0)
            || self.lengths.contains(&0)
            || self.hidden.is_empty()
            || self.lengths.is_empty()
        {
            return Err(invalid(
                "bench needs non-empty, positive hidden sizes and lengths",
            ));
        }
        if self.reps < 10 {
            return Err(invalid(format!(
                "bench needs at least 10 repetitions, got {}",
                self.reps
            )));
        }
        if self.inputs == 0 || self.steps_per_interval == 0 || self.max_inner == 0 {
            return Err(invalid(
                "inputs, steps_per_interval and max_inner must be >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub k: usize,
    pub n: usize,
    pub solver: String,
    pub reps: usize,
    /// Median seconds per sequence.
    pub median_s: f64,
    pub per_step_ns: f64,
    /// Sequences timed back to back inside each repetition.
    pub inner: usize,
}

/// `numerator` median over `denominator` median at one `(k, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRatio {
    pub numerator: String,
    pub denominator: String,
    pub k: usize,
    pub n: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub host_note: String,
    pub records: Vec<BenchRecord>,
    #[serde(default)]
    pub ratios: Vec<BenchRatio>,
}

impl BenchReport {
    pub fn record(&self, method: BenchMethod, k: usize, n: usize) -> Option<&BenchRecord> {
        self.records
            .iter()
            .find(|r| r.method == method.name() && r.k == k && r.n == n)
    }

    pub fn ratio(&self, slow: BenchMethod, fast: BenchMethod, k: usize, n: usize) -> Option<f64> {
        Some(self.record(slow, k, n)?.median_s / self.record(fast, k, n)?.median_s)
    }
}

/// Smallest positive difference between consecutive clock readings.
pub fn timer_tick() -> Duration {
    let mut best = Duration::from_secs(1);
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// One sequence of `n` samples through a `k`-neuron model, ready to run.
pub struct Workload {
    pub method: BenchMethod,
    /// Solver description, `"none"` for the closed-form methods.
    pub solver: String,
    run: Box<dyn FnMut() -> Result<f64>>,
}

impl Workload {
    /// Runs the whole sequence once; returns a checksum of the final state.
    pub fn run(&mut self) -> Result<f64> {
        (self.run)()
    }
}

/// The workload `bench_inference` times for `(method, k, n)`.
pub fn prepare(method: BenchMethod, k: usize, n: usize, cfg: &BenchConfig) -> Result<Workload> {
    let xs = inputs(n, cfg.inputs, cfg.seed.wrapping_add(n as u64));
    workload(method, k, xs, cfg)
}

fn inputs(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn solver_for(method: BenchMethod, steps: usize) -> Option<SolverConfig> {
    let h = 1.0 / steps as f64;
    match method {
        BenchMethod::LtcEuler => Some(SolverConfig::euler(h)),
        BenchMethod::LtcRk4 => Some(SolverConfig::rk4(h)),
        BenchMethod::LtcDopri => Some(SolverConfig::dopri(1e-6, 1e-8)),
        _ => None,
    }
}

fn describe(cfg: &SolverConfig) -> String {
    match cfg.method {
        SolverMethod::Euler => format!("euler(h={})", cfg.step),
        SolverMethod::Rk4 => format!("rk4(h={})", cfg.step),
        SolverMethod::DopriAdaptive => format!("dopri(rtol={:e},atol={:e})", cfg.rtol, cfg.atol),
    }
}

/// Runs the LTC network ODE over unit-spaced samples.
fn ltc_sequence(net: &ClosedFormNetwork, xs: &[Vec<f64>], cfg: &SolverConfig) -> Result<f64> {
    let ode = NetworkOde::new(net, RhsForm::Symmetric);
    let mut x = net.spec().x0.clone();
    let mut stats = SolverStats::default();
    for (i, input) in xs.iter().enumerate() {
        let t0 = i as f64;
        advance(
            &ode,
            &mut x,
            input,
            t0,
            t0 + 1.0,
            cfg,
            &mut stats,
            &mut |_, _| {},
        )?;
    }
    Ok(x.iter().sum())
}

fn cfc_sequence(model: &CfcModel, xs: &[Tensor]) -> Result<f64> {
    let mut g = Eval;
    let p = model.bind(&mut g);
    let mut state = model.zero_state(&mut g, 1);
    for x in xs {
        state = model.step(&mut g, &p, &state, x, &[1.0], None)?;
    }
    Ok(state.h.data().iter().sum())
}

fn workload(
    method: BenchMethod,
    k: usize,
    xs: Vec<Vec<f64>>,
    cfg: &BenchConfig,
) -> Result<Workload> {
    let m = cfg.inputs;
    let spec = match cfg.fan_in {
        Some(f) => LtcNetworkSpec::random_fan_in(m, k, f.min(k), cfg.seed)?,
        None => LtcNetworkSpec::fully_connected(m, k, cfg.seed)?,
    };
    let net = compile(&spec)?;
    Ok(match method {
        BenchMethod::Cfc => {
            let model = CfcModel::new(ModelConfig::new(Variant::Cfc, m, k), cfg.seed)?;
            let tensors: Vec<Tensor> = xs
                .iter()
                .map(|x| Tensor::new(vec![1, m], x.clone()))
                .collect::<Result<_>>()?;
            Workload {
                method,
                solver: "none".into(),
                run: Box::new(move || cfc_sequence(&model, &tensors)),
            }
        }
        BenchMethod::ClosedForm => {
            let times: Vec<f64> = (1..=xs.len()).map(|i| i as f64).collect();
            let series = IrregularSeries::new(xs, None, 0.0)?;
            Workload {
                method,
                solver: "none".into(),
                run: Box::new(move || {
                    let out = net.evaluate(&series, &times, CompiledTime::Delta)?;
                    Ok(out.iter().map(|r| r[r.len() - 1]).sum())
                }),
            }
        }
        solver_method => {
            let scfg = solver_for(solver_method, cfg.steps_per_interval).expect("solver method");
            Workload {
                method,
                solver: describe(&scfg),
                run: Box::new(move || ltc_sequence(&net, &xs, &scfg)),
            }
        }
    })
}

/// Median seconds per sequence over `reps` repetitions, growing the inner
/// loop until one repetition spans at least 100 timer ticks.
fn time_workload(
    w: &mut Workload,
    reps: usize,
    max_inner: usize,
    tick: Duration,
) -> Result<(f64, usize)> {
    let floor = tick * 100;
    let mut inner = 1usize;
    let mut sink = 0.0;
    sink += w.run()?;
    loop {
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            for _ in 0..inner {
                sink += w.run()?;
            }
            samples.push(start.elapsed());
        }
        samples.sort();
        let median = samples[reps / 2];
        if median >= floor {
            std::hint::black_box(sink);
            return Ok((median.as_secs_f64() / inner as f64, inner));
        }
        if inner >= max_inner {
            return Err(Error::TimerResolution {
                method: w.method.name().to_string(),
                reps: inner,
            });
        }
        inner = (inner * 2).min(max_inner);
    }
}

/// Times every method at every `(k, n)` on identical inputs, single-threaded.
pub fn bench_inference(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let tick = timer_tick();
    let mut records = Vec::new();
    let mut ratios = Vec::new();
    for &k in &cfg.hidden {
        for &n in &cfg.lengths {
            let mut medians = Vec::new();
            for &method in &cfg.methods {
                let mut w = prepare(method, k, n, cfg)?;
                let (median_s, inner) = time_workload(&mut w, cfg.reps, cfg.max_inner, tick)?;
                medians.push((method, median_s));
                records.push(BenchRecord {
                    method: method.name().to_string(),
                    k,
                    n,
                    solver: w.solver,
                    reps: cfg.reps,
                    median_s,
                    per_step_ns: median_s / n as f64 * 1e9,
                    inner,
                });
            }
            for &(slow, s) in medians.iter().filter(|(m, _)| m.uses_solver()) {
                for &(fast, f) in medians.iter().filter(|(m, _)| !m.uses_solver()) {
                    ratios.push(BenchRatio {
                        numerator: slow.name().to_string(),
                        denominator: fast.name().to_string(),
                        k,
                        n,
                        ratio: s / f,
                    });
                }
            }
        }
    }
    Ok(BenchReport {
        host_note: host_note(tick),
        records,
        ratios,
    })
}

fn host_note(tick: Duration) -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {}, {cpus} logical CPUs visible, single-threaded run, timer tick {:?}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        tick
    )
}
