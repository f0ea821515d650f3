//! The op vocabulary shared by the recording [`Tape`](super::Tape) and the
//! no-grad [`Eval`] backend. Model code is written once against [`Graph`].

use rand::Rng;
use rand::RngCore;

use super::tensor::{self, Tensor};
use crate::error::{invalid, Result};

/// Unary elementwise functions with known derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Sigmoid,
    Tanh,
    Relu,
    Silu,
    LecunTanh,
}

impl Unary {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Silu => "silu",
            Unary::LecunTanh => "lecun_tanh",
        }
    }

    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Sigmoid => tensor::sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Silu => tensor::silu(x),
            Unary::LecunTanh => tensor::lecun_tanh(x),
        }
    }

    /// Derivative given the input `x` and output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Silu => {
                let s = tensor::sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::LecunTanh => {
                let th = (tensor::LECUN_SLOPE * x).tanh();
                tensor::LECUN_SCALE * tensor::LECUN_SLOPE * (1.0 - th * th)
            }
        }
    }
}

/// Draws an inverted-dropout mask (kept entries scaled by `1 / (1 - rate)`).
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// A backend that evaluates (and possibly records) tensor operations.
///
/// Elementwise binary ops broadcast the right operand over the left
/// operand's leading axis and nothing else.
pub trait Graph {
    type Node: Clone;

    /// A value that never receives a gradient.
    fn constant(&mut self, value: Tensor) -> Self::Node;
    /// A trainable leaf.
    fn param(&mut self, value: &Tensor) -> Self::Node;
    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor;

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn unary(&mut self, f: Unary, a: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, a: &Self::Node, factor: f64) -> Result<Self::Node>;
    fn concat(&mut self, parts: &[Self::Node]) -> Result<Self::Node>;
    fn slice(&mut self, a: &Self::Node, start: usize, end: usize) -> Result<Self::Node>;
    /// Inverted dropout; `rng = None` means inference mode (identity).
    fn dropout(
        &mut self,
        a: &Self::Node,
        rate: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Self::Node>;
    fn sum(&mut self, a: &Self::Node) -> Result<Self::Node>;
    fn mean(&mut self, a: &Self::Node) -> Result<Self::Node>;
    fn bce_with_logits(&mut self, logits: &Self::Node, targets: &Self::Node) -> Result<Self::Node>;

    fn neg(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::Neg, a)
    }
    fn exp(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::Exp, a)
    }
    fn sigmoid(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::Sigmoid, a)
    }
    fn tanh(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::Tanh, a)
    }
    fn relu(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::Relu, a)
    }
    fn silu(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::Silu, a)
    }
    fn lecun_tanh(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.unary(Unary::LecunTanh, a)
    }
}

/// Forward-only backend: nodes are plain tensors and nothing is recorded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval;

impl Graph for Eval {
    type Node = Tensor;

    fn constant(&mut self, value: Tensor) -> Tensor {
        value
    }

    fn param(&mut self, value: &Tensor) -> Tensor {
        value.clone()
    }

    fn value<'a>(&'a self, node: &'a Tensor) -> &'a Tensor {
        node
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::binary("add", a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::binary("sub", a, b, |x, y| x - y)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::binary("mul", a, b, |x, y| x * y)
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }

    fn unary(&mut self, f: Unary, a: &Tensor) -> Result<Tensor> {
        a.map(|x| f.apply(x)).check_finite(f.name())
    }

    fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor> {
        a.map(|x| x * factor).check_finite("scale")
    }

    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat(&refs)
    }

    fn slice(&mut self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        tensor::slice(a, start, end)
    }

    fn dropout(&mut self, a: &Tensor, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        match rng {
            None => Ok(a.clone()),
            Some(rng) => {
                let mask = dropout_mask(a.len(), rate, rng)?;
                let mut out = a.clone();
                for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                Ok(out)
            }
        }
    }

    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        Tensor::scalar(a.data().iter().sum()).check_finite("sum")
    }

    fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.is_empty() {
            return Err(invalid("mean of empty tensor"));
        }
        Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64).check_finite("mean")
    }

    fn bce_with_logits(&mut self, logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
        tensor::bce_with_logits(logits, targets)
    }
}
