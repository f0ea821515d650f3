use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cfc_core::compiler::CompiledTime;
use cfc_core::ltc::{RhsForm, SolverConfig, SolverMethod};
use cfc_core::models::{CfcModel, IrregularSeries, TimePolicy, Variant};
use cfc_core::training::{
    evaluate, generate_xor, read_jsonl, to_series, train_with, write_jsonl, xor_preset, xor_splits,
    OptimizerKind, TrainConfig, XorDatasetConfig, XorEncoding, XorFeatures, XorSequence,
};
use cfc_core::{
    bench_inference, compile, sample_signal, simulate_ode, verify_compiled, BenchConfig,
    BenchMethod, ClosedFormNetwork, LtcNetworkSpec, PiecewiseConstantSignal,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "cfc",
    version,
    about = "Closed-form continuous-depth networks and LTC tooling"
)]
struct Cli {
    /// JSON file with TrainConfig / XorDatasetConfig fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bit-stream XOR dataset as JSON lines.
    GenXor(GenXorArgs),
    /// Train a CfC model on an XOR dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Compile an LTC network spec into a closed-form network.
    Compile(CompileArgs),
    /// Compare the LTC ODE with its compiled network on an input signal.
    Verify(VerifyArgs),
    /// Time LTC solvers against closed-form inference.
    Bench(BenchArgs),
    /// Dump an LTC or compiled trajectory as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct GenXorArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    encoding: Option<XorEncoding>,
    #[arg(long)]
    bits: Option<usize>,
    /// Draw training sequence lengths uniformly from [min-bits, bits].
    #[arg(long)]
    min_bits: Option<usize>,
    #[arg(long, env = "CFC_SEED")]
    seed: Option<u64>,
    /// Write train/val/test splits into this directory instead of one file.
    #[arg(long)]
    split: bool,
    #[arg(long, default_value = "xor.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl and val.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "cfc")]
    variant: Variant,
    /// Per-step inputs: `value` or `value-dt`.
    #[arg(long, default_value = "value")]
    features: XorFeatures,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, env = "CFC_SEED")]
    seed: Option<u64>,
    /// Stop early once validation accuracy reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Per-epoch report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SignalArgs {
    /// Piecewise-constant input: {"breakpoints": [...], "levels": [[...], ...]}.
    #[arg(long)]
    signal: PathBuf,
    /// Samples per time unit.
    #[arg(long, default_value_t = 100.0)]
    rate: f64,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value = "dopri-adaptive")]
    solver: String,
    /// Step size for fixed-step solvers.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value = "symmetric")]
    rhs: String,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Compiled network; compiled from the spec when omitted.
    #[arg(long)]
    net: Option<PathBuf>,
    #[command(flatten)]
    signal: SignalArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// LTC spec to integrate with the ODE solver.
    #[arg(long, conflicts_with = "net", required_unless_present = "net")]
    spec: Option<PathBuf>,
    /// Compiled network to evaluate.
    #[arg(long)]
    net: Option<PathBuf>,
    #[command(flatten)]
    signal: SignalArgs,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "ltc-rk4,cfc")]
    methods: Vec<BenchMethod>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    steps_per_interval: usize,
    /// Hidden sources per LTC neuron; 0 wires every neuron to every other.
    #[arg(long, default_value_t = 8)]
    fan_in: usize,
    #[arg(long, env = "CFC_SEED", default_value_t = 0)]
    seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Contents of `--config`. Every field is optional; command-line flags win.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    optimizer: Option<OptimizerKind>,
    base_lr: Option<f64>,
    decay_lr: Option<f64>,
    clipnorm: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    target_accuracy: Option<f64>,
    n_sequences: Option<usize>,
    bits_per_sequence: Option<usize>,
    min_bits: Option<usize>,
    encoding: Option<XorEncoding>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn apply(&self, t: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { t.$f = v; })* };
        }
        set!(
            optimizer,
            base_lr,
            decay_lr,
            clipnorm,
            weight_decay,
            batch_size,
            epochs,
            seed,
            workers
        );
        if self.target_accuracy.is_some() {
            t.target_accuracy = self.target_accuracy;
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenXor(a) => gen_xor(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Eval(a) => eval(a),
        Command::Compile(a) => {
            let spec = LtcNetworkSpec::load(&a.input)
                .with_context(|| format!("loading {}", a.input.display()))?;
            let net = compile(&spec)?;
            fs::write(&a.out, net.to_json()?)
                .with_context(|| format!("writing {}", a.out.display()))?;
            println!(
                "compiled {} hidden neurons, {} synapses",
                net.n_hidden(),
                net.synapse_count()
            );
            Ok(())
        }
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn gen_xor(a: GenXorArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = XorDatasetConfig::new(
        a.n.or(file.n_sequences).unwrap_or(1000),
        a.encoding.or(file.encoding).unwrap_or(XorEncoding::Dense),
        a.seed.or(file.seed).unwrap_or(0),
    );
    if let Some(bits) = a.bits.or(file.bits_per_sequence) {
        cfg.bits_per_sequence = bits;
    }
    cfg.min_bits = a.min_bits.or(file.min_bits);
    if a.split {
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        let [train, val, test] = xor_splits(&cfg)?;
        for (name, data) in [("train", &train), ("val", &val), ("test", &test)] {
            write_jsonl(a.out.join(format!("{name}.jsonl")), data)?;
        }
        println!(
            "wrote {} / {} / {} sequences to {}",
            train.len(),
            val.len(),
            test.len(),
            a.out.display()
        );
    } else {
        if cfg.min_bits.is_some() {
            bail!("--min-bits only applies to the training split; use --split");
        }
        let data = generate_xor(&cfg)?;
        write_jsonl(&a.out, &data)?;
        println!("wrote {} sequences to {}", data.len(), a.out.display());
    }
    Ok(())
}

fn load_series(path: &Path, features: XorFeatures) -> Result<Vec<IrregularSeries>> {
    let seqs: Vec<XorSequence> =
        read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(to_series(&seqs, features)?)
}

/// Equidistant unless some step is longer than one time unit.
fn policy_for(data: &[IrregularSeries]) -> Result<TimePolicy> {
    for s in data {
        if s.deltas()?.iter().any(|&d| d != 1.0) {
            return Ok(TimePolicy::timestamped());
        }
    }
    Ok(TimePolicy::default())
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let train_set = load_series(&a.data.join("train.jsonl"), a.features)?;
    let val_set = load_series(&a.data.join("val.jsonl"), a.features)?;
    let (mut mc, mut tc) = xor_preset(a.variant, a.features.dims());
    file.apply(&mut tc);
    if let Some(h) = a.hidden {
        mc.hidden = h;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.base_lr = lr;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if a.target_accuracy.is_some() {
        tc.target_accuracy = a.target_accuracy;
    }
    mc.time_policy = policy_for(&train_set)?;
    let mut model = CfcModel::new(mc, tc.seed)?;
    let report = train_with(&mut model, &train_set, &val_set, &tc, &mut |e, r| {
        eprintln!(
            "epoch {e:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.2e}  {:.1}s",
            r.loss, r.acc, r.val_loss, r.val_acc, r.lr, r.seconds
        );
    })?;
    model
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "best epoch {}: val_acc {:.4}, val_loss {:.4}",
        report.best.epoch, report.best.val_acc, report.best.val_loss
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model =
        CfcModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    // The feature set is implied by the model's input width.
    let features = if model.inputs() == XorFeatures::ValueDt.dims() {
        XorFeatures::ValueDt
    } else {
        XorFeatures::Value
    };
    let data = load_series(&a.data, features)?;
    println!("{}", serde_json::to_string(&evaluate(&model, &data)?)?);
    Ok(())
}

fn solver_config(a: &SignalArgs) -> Result<(SolverConfig, RhsForm)> {
    let method: SolverMethod = serde_json::from_value(serde_json::Value::String(a.solver.clone()))
        .map_err(|_| {
            anyhow::anyhow!("unknown solver '{}' (euler, rk4, dopri-adaptive)", a.solver)
        })?;
    let cfg = match method {
        SolverMethod::Euler => SolverConfig::euler(a.step),
        SolverMethod::Rk4 => SolverConfig::rk4(a.step),
        SolverMethod::DopriAdaptive => SolverConfig::dopri(1e-8, 1e-10),
    };
    let form: RhsForm = serde_json::from_value(serde_json::Value::String(a.rhs.clone()))
        .map_err(|_| anyhow::anyhow!("unknown right-hand side '{}' (symmetric, ltc)", a.rhs))?;
    Ok((cfg, form))
}

fn load_signal(a: &SignalArgs) -> Result<IrregularSeries> {
    let text =
        fs::read_to_string(&a.signal).with_context(|| format!("reading {}", a.signal.display()))?;
    let signal: PiecewiseConstantSignal =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.signal.display()))?;
    Ok(sample_signal(&signal, a.rate, a.t_end)?)
}

fn load_net(spec: Option<&Path>, net: Option<&Path>) -> Result<ClosedFormNetwork> {
    match (net, spec) {
        (Some(n), _) => {
            ClosedFormNetwork::load(n).with_context(|| format!("loading {}", n.display()))
        }
        (None, Some(s)) => {
            let spec =
                LtcNetworkSpec::load(s).with_context(|| format!("loading {}", s.display()))?;
            Ok(compile(&spec)?)
        }
        (None, None) => bail!("need --spec or --net"),
    }
}

fn verify(a: VerifyArgs) -> Result<()> {
    let spec =
        LtcNetworkSpec::load(&a.spec).with_context(|| format!("loading {}", a.spec.display()))?;
    let net = load_net(Some(&a.spec), a.net.as_deref())?;
    if net.spec() != &spec {
        bail!(
            "compiled network was not produced from {}",
            a.spec.display()
        );
    }
    let series = load_signal(&a.signal)?;
    let (cfg, form) = solver_config(&a.signal)?;
    let report = verify_compiled(&net, &series, &cfg, form)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// CSV with a `t` column followed by one column per hidden neuron.
fn trajectory_csv(times: &[f64], rows: &[Vec<f64>]) -> String {
    let mut out = String::from("t");
    for i in 0..rows.len() {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        out.push_str(&t.to_string());
        for row in rows {
            out.push(',');
            out.push_str(&row[k].to_string());
        }
        out.push('\n');
    }
    out
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let net = load_net(a.spec.as_deref(), a.net.as_deref())?;
    let series = load_signal(&a.signal)?;
    let times = series.timestamps.clone().unwrap_or_default();
    let rows = if a.spec.is_some() {
        let (cfg, form) = solver_config(&a.signal)?;
        simulate_ode(&net, &series, &cfg, form)?
    } else {
        net.evaluate(&series, &times, CompiledTime::Elapsed)?
    };
    emit(a.out.as_deref(), &trajectory_csv(&times, &rows))
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        hidden: a.k,
        lengths: a.n,
        methods: a.methods,
        reps: a.reps,
        steps_per_interval: a.steps_per_interval,
        fan_in: (a.fan_in > 0).then_some(a.fan_in),
        seed: a.seed,
        ..BenchConfig::default()
    };
    let report = bench_inference(&cfg)?;
    for r in &report.ratios {
        eprintln!(
            "{} / {} at k={} n={}: {:.1}x",
            r.numerator, r.denominator, r.k, r.n, r.ratio
        );
    }
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}
