//! Reverse-mode differentiation by recording every op on an append-only tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order and every node is visited once.

use rand::RngCore;

use super::graph::{dropout_mask, Graph, Unary};
use super::tensor::{self, Broadcast, Tensor};
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    MatMul(usize, usize),
    Unary(Unary, usize),
    Scale(usize, f64),
    Concat(Vec<usize>),
    Slice {
        src: usize,
        start: usize,
        end: usize,
    },
    Dropout {
        src: usize,
        mask: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
    Bce {
        logits: usize,
        targets: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded op recorder. Use one tape per worker.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// ∂loss/∂var for a leaf. Leaves the loss does not depend on get a zero
    /// tensor, as does every non-leaf node.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var> {
        let kind = tensor::broadcast_kind(name, self.val(a), self.val(b))?;
        let out = tensor::binary(name, self.val(a), self.val(b), f)?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, op(a.0, b.0, kind), rg))
    }

    /// Computes ∂loss/∂node for every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.len() != 1 || loss_val.rank() > 1 {
            return Err(Error::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_val.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            // Only leaves are ever queried; dropping the rest keeps memory flat.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let send = |grads: &mut [Option<Tensor>], target: usize, contrib: Tensor| {
            if !self.nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let zip = |a: &Tensor, b: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let mut out = a.clone();
            for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
                *o = f(*o, *v);
            }
            out
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b, kind) => {
                send(grads, *a, g.clone());
                let shape = self.nodes[*b].value.shape();
                send(grads, *b, tensor::reduce_to(g.clone(), *kind, shape));
            }
            Op::Sub(a, b, kind) => {
                send(grads, *a, g.clone());
                let shape = self.nodes[*b].value.shape();
                send(grads, *b, tensor::reduce_to(g.map(|v| -v), *kind, shape));
            }
            Op::Mul(a, b, kind) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.nodes[*a].requires_grad {
                    let ga = tensor::zip_broadcast(g, bv, *kind, |x, y| x * y);
                    send(grads, *a, ga);
                }
                if self.nodes[*b].requires_grad {
                    let gb = zip(g, av, &|x, y| x * y);
                    send(grads, *b, tensor::reduce_to(gb, *kind, bv.shape()));
                }
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.nodes[*a].requires_grad {
                    send(grads, *a, tensor::matmul_a_bt(g, bv));
                }
                if self.nodes[*b].requires_grad {
                    send(grads, *b, tensor::matmul_at_b(av, g));
                }
            }
            Op::Unary(f, a) => {
                let x = &self.nodes[*a].value;
                let y = &node.value;
                let mut out = g.clone();
                for ((o, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *o *= f.derivative(xv, yv);
                }
                send(grads, *a, out);
            }
            Op::Scale(a, c) => send(grads, *a, g.map(|v| v * c)),
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.nodes[p].value.last_dim();
                    if self.nodes[p].requires_grad {
                        let piece = tensor::slice(g, start, start + w)
                            .expect("concat gradient slice in bounds");
                        send(grads, p, piece);
                    }
                    start += w;
                }
            }
            Op::Slice { src, start, end } => {
                let sv = &self.nodes[*src].value;
                let w = sv.last_dim();
                let cw = end - start;
                let mut out = Tensor::zeros(sv.shape());
                let rows = sv.len() / w.max(1);
                let od = out.data_mut();
                for r in 0..rows {
                    od[r * w + start..r * w + end].copy_from_slice(&g.data()[r * cw..(r + 1) * cw]);
                }
                send(grads, *src, out);
            }
            Op::Dropout { src, mask } => {
                let mut out = g.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask) {
                    *o *= m;
                }
                send(grads, *src, out);
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape();
                send(grads, *a, Tensor::full(shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let av = &self.nodes[*a].value;
                send(
                    grads,
                    *a,
                    Tensor::full(av.shape(), g.data()[0] / av.len() as f64),
                );
            }
            Op::Bce { logits, targets } => {
                let z = &self.nodes[*logits].value;
                let y = &self.nodes[*targets].value;
                let scale = g.data()[0] / z.len() as f64;
                let gz = zip(z, y, &|zv, yv| (tensor::sigmoid(zv) - yv) * scale);
                send(grads, *logits, gz);
                if self.nodes[*targets].requires_grad {
                    // ∂/∂y of the logit form is −z / n
                    send(grads, *targets, z.map(|zv| -zv * scale));
                }
            }
        }
    }
}

impl Graph for Tape {
    type Node = Var;

    fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn param(&mut self, value: &Tensor) -> Var {
        self.leaf(value.clone())
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor {
        self.val(*node)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.elementwise("add", *a, *b, |x, y| x + y, Op::Add)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.elementwise("sub", *a, *b, |x, y| x - y, Op::Sub)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.elementwise("mul", *a, *b, |x, y| x * y, Op::Mul)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::matmul(self.val(*a), self.val(*b))?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    fn unary(&mut self, f: Unary, a: &Var) -> Result<Var> {
        let out = self.val(*a).map(|x| f.apply(x)).check_finite(f.name())?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Unary(f, a.0), rg))
    }

    fn scale(&mut self, a: &Var, factor: f64) -> Result<Var> {
        let out = self.val(*a).map(|x| x * factor).check_finite("scale")?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Scale(a.0, factor), rg))
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let out = tensor::concat(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs(&ids);
        Ok(self.push(out, Op::Concat(ids), rg))
    }

    fn slice(&mut self, a: &Var, start: usize, end: usize) -> Result<Var> {
        let out = tensor::slice(self.val(*a), start, end)?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(
            out,
            Op::Slice {
                src: a.0,
                start,
                end,
            },
            rg,
        ))
    }

    fn dropout(&mut self, a: &Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let Some(rng) = rng else {
            return Ok(*a);
        };
        let mask = dropout_mask(self.val(*a).len(), rate, rng)?;
        let mut out = self.val(*a).clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Dropout { src: a.0, mask }, rg))
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(*a).data().iter().sum()).check_finite("sum")?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Sum(a.0), rg))
    }

    fn mean(&mut self, a: &Var) -> Result<Var> {
        let v = self.val(*a);
        if v.is_empty() {
            return Err(invalid("mean of empty tensor"));
        }
        let out =
            Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64).check_finite("mean")?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Mean(a.0), rg))
    }

    fn bce_with_logits(&mut self, logits: &Var, targets: &Var) -> Result<Var> {
        let out = tensor::bce_with_logits(self.val(*logits), self.val(*targets))?;
        let rg = self.needs(&[logits.0, targets.0]);
        Ok(self.push(
            out,
            Op::Bce {
                logits: logits.0,
                targets: targets.0,
            },
            rg,
        ))
    }
}
