//! Central finite differences against reverse-mode gradients.

// `op!` bodies are shared by `Tape` (Copy nodes) and `Eval` (owned tensors).
#![allow(clippy::clone_on_copy)]

use cfc_core::autodiff::Unary;
use cfc_core::models::{
    Activation, Batch, CfcModel, IrregularSeries, ModelConfig, TimePolicy, Variant,
};
use cfc_core::{Eval, Graph, Tape, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values in `[-hi, -lo] ∪ [lo, hi]`, away from kinks at zero.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = random_tensor(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

pub type OpFn<G> = fn(&mut G, &[<G as Graph>::Node]) -> <G as Graph>::Node;

/// Relative gradient error of the loss `Σ w ⊙ op(inputs)` with fixed random
/// weights `w`.
pub fn op_error(inputs: Vec<Tensor>, tape_op: OpFn<Tape>, eval_op: OpFn<Eval>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mut e = Eval;
    let consts: Vec<Tensor> = inputs.iter().map(|t| e.constant(t.clone())).collect();
    let out_shape = eval_op(&mut e, &consts).shape().to_vec();
    let w = random_tensor(&mut rng, &out_shape, -1.0, 1.0);

    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t)).collect();
    let y = tape_op(&mut tape, &vars);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(&y, &wv).unwrap();
    let loss = tape.sum(&prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let loss_at = |xs: &[Tensor]| -> f64 {
        let mut e = Eval;
        let y = eval_op(&mut e, xs);
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, var) in vars.iter().enumerate() {
        analytic.extend_from_slice(grads.wrt(*var).data());
        for i in 0..inputs[k].len() {
            let mut xs = inputs.clone();
            xs[k].data_mut()[i] += H;
            let up = loss_at(&xs);
            xs[k].data_mut()[i] -= 2.0 * H;
            let down = loss_at(&xs);
            numeric.push((up - down) / (2.0 * H));
        }
    }
    rel_err(&analytic, &numeric)
}

macro_rules! op {
    (|$g:ident, $x:ident| $body:expr) => {
        (
            (|$g: &mut Tape, $x: &[<Tape as Graph>::Node]| $body) as OpFn<Tape>,
            (|$g: &mut Eval, $x: &[<Eval as Graph>::Node]| $body) as OpFn<Eval>,
        )
    };
}

/// `(op, relative error)` for every differentiable op at one seed.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let b = random_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let row = random_tensor(&mut rng, &[4], -2.0, 2.0);
    let m = random_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let kinked = off_zero(&mut rng, &[3, 4], 1e-2, 2.0);
    let labels = random_tensor(&mut rng, &[3, 4], 0.0, 1.0).map(|v| v.round());

    let binary = [
        ("add", op!(|g, x| g.add(&x[0], &x[1]).unwrap())),
        ("sub", op!(|g, x| g.sub(&x[0], &x[1]).unwrap())),
        ("mul", op!(|g, x| g.mul(&x[0], &x[1]).unwrap())),
        (
            "concat",
            op!(|g, x| g.concat(&[x[0].clone(), x[1].clone()]).unwrap()),
        ),
    ];
    for (name, (t, e)) in binary {
        out.push((name, op_error(vec![a.clone(), b.clone()], t, e, seed)));
        if name != "concat" {
            // Right operand broadcast over the leading axis.
            out.push((name, op_error(vec![a.clone(), row.clone()], t, e, seed)));
        }
    }
    let unary = [
        ("neg", op!(|g, x| g.neg(&x[0]).unwrap())),
        ("exp", op!(|g, x| g.exp(&x[0]).unwrap())),
        ("sigmoid", op!(|g, x| g.sigmoid(&x[0]).unwrap())),
        ("tanh", op!(|g, x| g.tanh(&x[0]).unwrap())),
        ("silu", op!(|g, x| g.silu(&x[0]).unwrap())),
        ("lecun-tanh", op!(|g, x| g.lecun_tanh(&x[0]).unwrap())),
        ("scale", op!(|g, x| g.scale(&x[0], -1.7).unwrap())),
        ("slice", op!(|g, x| g.slice(&x[0], 1, 3).unwrap())),
        ("sum", op!(|g, x| g.sum(&x[0]).unwrap())),
        ("mean", op!(|g, x| g.mean(&x[0]).unwrap())),
    ];
    for (name, (t, e)) in unary {
        out.push((name, op_error(vec![a.clone()], t, e, seed)));
    }
    let (t, e) = op!(|g, x| g.relu(&x[0]).unwrap());
    out.push(("relu", op_error(vec![kinked.clone()], t, e, seed)));
    let (t, e) = op!(|g, x| g.unary(Unary::Relu, &x[0]).unwrap());
    out.push(("unary", op_error(vec![kinked], t, e, seed)));
    let (t, e) = op!(|g, x| g.matmul(&x[0], &x[1]).unwrap());
    out.push(("matmul", op_error(vec![a.clone(), m], t, e, seed)));
    let (t, e) = op!(|g, x| g.bce_with_logits(&x[0], &x[1]).unwrap());
    out.push(("bce", op_error(vec![a.clone(), labels], t, e, seed)));
    // Same seed on both passes, hence the same mask.
    let (t, e) = op!(|g, x| {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        g.dropout(&x[0], 0.3, Some(&mut r as &mut dyn RngCore))
            .unwrap()
    });
    out.push(("dropout", op_error(vec![a.clone()], t, e, seed)));
    out
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    rows: usize,
    steps: usize,
    m: usize,
) -> Vec<IrregularSeries> {
    (0..rows)
        .map(|r| {
            // Rows of different length exercise masking.
            let len = steps - r.min(steps - 1) % 3;
            let mut t = 0.0;
            let mut ts = Vec::new();
            let values = (0..len)
                .map(|_| {
                    t += rng.gen_range(0.2..2.0);
                    ts.push(t);
                    (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()
                })
                .collect();
            let s =
                IrregularSeries::new(values, Some(ts), f64::from(rng.gen_range(0..2u8))).unwrap();
            s.padded(steps)
        })
        .collect()
}

pub fn model_loss(model: &CfcModel, batch: &Batch, dropout_seed: u64) -> f64 {
    let mut g = Eval;
    let p = model.bind(&mut g);
    let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
    let z = model.logits(&mut g, &p, batch, Some(&mut r)).unwrap();
    let y = g.constant(batch.labels.clone());
    g.bce_with_logits(&z, &y).unwrap().item().unwrap()
}

/// Relative error of every parameter gradient of a small model on a padded
/// 8-step batch of three rows.
pub fn model_error(variant: Variant, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, d) = (2, 4);
    let mut cfg = ModelConfig::new(variant, m, d);
    cfg.backbone.units = 6;
    cfg.backbone.layers = 1 + (seed % 2) as usize;
    // ReLU kinks would make central differences unreliable; relu is checked
    // on its own above.
    cfg.backbone.activation =
        [Activation::Silu, Activation::Tanh, Activation::LecunTanh][seed as usize % 3];
    cfg.backbone.dropout = if seed.is_multiple_of(4) { 0.2 } else { 0.0 };
    cfg.gate_only = variant == Variant::CfcNoGate && seed.is_multiple_of(5);
    cfg.time_policy = if seed.is_multiple_of(2) {
        TimePolicy::timestamped()
    } else {
        TimePolicy::default()
    };
    let mut model = CfcModel::new(cfg, seed).unwrap();
    // Move Cf-S away from the all-zero A and w_tau initialisation.
    for name in ["cfs.A", "cfs.w_tau"] {
        if model.params().contains_key(name) {
            let t = random_tensor(&mut rng, &[d], 0.1, 0.9);
            model.set_param(name, t).unwrap();
        }
    }
    let series = random_batch(&mut rng, 3, 8, m);
    let refs: Vec<&IrregularSeries> = series.iter().collect();
    let batch = Batch::new(&refs, model.time_policy()).unwrap();
    let dropout_seed = seed + 1000;

    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
    let z = model.logits(&mut tape, &p, &batch, Some(&mut r)).unwrap();
    let y = tape.constant(batch.labels.clone());
    let loss = tape.bce_with_logits(&z, &y).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let names: Vec<String> = model.params().keys().cloned().collect();
    for name in &names {
        analytic.extend_from_slice(grads.wrt(p[name]).data());
        let base = model.params()[name].clone();
        for i in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[i] += H;
            model.set_param(name, t.clone()).unwrap();
            let up = model_loss(&model, &batch, dropout_seed);
            t.data_mut()[i] -= 2.0 * H;
            model.set_param(name, t).unwrap();
            let down = model_loss(&model, &batch, dropout_seed);
            numeric.push((up - down) / (2.0 * H));
        }
        model.set_param(name, base).unwrap();
    }
    rel_err(&analytic, &numeric)
}
