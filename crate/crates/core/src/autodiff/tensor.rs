//! Dense row-major `f64` tensors and the forward kernels shared by the tape
//! and the no-grad evaluator.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense row-major tensor of 64-bit floats. A rank-0 tensor (empty shape)
/// holds exactly one value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Self::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(invalid(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a rank-2 tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("from_rows: ragged rows"));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// In-place `self += other` for identical shapes.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) const LECUN_SCALE: f64 = 1.7159;
pub(crate) const LECUN_SLOPE: f64 = 2.0 / 3.0;

pub(crate) fn lecun_tanh(x: f64) -> f64 {
    LECUN_SCALE * (LECUN_SLOPE * x).tanh()
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// How the right operand of an elementwise op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand repeats across the left operand's leading axis.
    Leading,
}

pub(crate) fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        Ok(Broadcast::Same)
    } else if a.rank() == b.rank() + 1 && a.shape[1..] == b.shape[..] {
        Ok(Broadcast::Leading)
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        })
    }
}

pub(crate) fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let kind = broadcast_kind(op, a, b)?;
    zip_broadcast(a, b, kind, f).check_finite(op)
}

/// Elementwise combine without shape validation or finiteness checks.
pub(crate) fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    kind: Broadcast,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let data = match kind {
        Broadcast::Same => a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Leading => {
            let n = b.data.len();
            if n == 0 {
                Vec::new()
            } else {
                a.data
                    .chunks(n)
                    .flat_map(|row| row.iter().zip(&b.data).map(|(&x, &y)| f(x, y)))
                    .collect()
            }
        }
    };
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

/// Sums a gradient of the left operand's shape down to the right operand's
/// shape.
pub(crate) fn reduce_to(g: Tensor, kind: Broadcast, target: &[usize]) -> Tensor {
    match kind {
        Broadcast::Same => g,
        Broadcast::Leading => {
            let n: usize = target.iter().product();
            let mut out = vec![0.0; n];
            if n > 0 {
                for row in g.data.chunks(n) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Tensor {
                shape: target.to_vec(),
                data: out,
            }
        }
    }
}

fn matmul_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok((a.shape[0], a.shape[1], b.shape[1]))
}

/// `c [rows, cols] = a · b` with explicit element strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    rows: usize,
    inner: usize,
    cols: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
) -> Vec<f64> {
    let mut c = vec![0.0; rows * cols];
    if rows == 0 || cols == 0 || inner == 0 {
        return c;
    }
    // Packing costs more than it saves for a handful of rows.
    if rows <= 4 && b_strides.1 == 1 {
        small_rows(&mut c, inner, cols, a, a_strides, b, b_strides.0);
        return c;
    }
    debug_assert!(a.len() > (rows - 1) * a_strides.0 + (inner - 1) * a_strides.1);
    debug_assert!(b.len() > (inner - 1) * b_strides.0 + (cols - 1) * b_strides.1);
    // SAFETY: the asserts above bound every index dgemm reads, and `c` is
    // exactly `rows * cols` with row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            0.0,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
    c
}

fn small_rows(
    c: &mut [f64],
    inner: usize,
    cols: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_row: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the feature was detected at runtime.
        unsafe { small_rows_avx(c, inner, cols, a, a_strides, b, b_row) };
        return;
    }
    small_rows_body(c, inner, cols, a, a_strides, b, b_row);
}

// Wider registers only; no FMA, so results match the baseline path bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn small_rows_avx(
    c: &mut [f64],
    inner: usize,
    cols: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_row: usize,
) {
    small_rows_body(c, inner, cols, a, a_strides, b, b_row);
}

#[inline(always)]
fn small_rows_body(
    c: &mut [f64],
    inner: usize,
    cols: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_row: usize,
) {
    let brow = |p: usize| &b[p * b_row..p * b_row + cols];
    for (i, out) in c.chunks_exact_mut(cols).enumerate() {
        let x = |p: usize| a[i * a_strides.0 + p * a_strides.1];
        let mut p = 0;
        while p + 4 <= inner {
            let (x0, x1, x2, x3) = (x(p), x(p + 1), x(p + 2), x(p + 3));
            // Equal-length reslicing lets the loop drop bounds checks and vectorize.
            let n = out.len();
            let (b0, b1, b2, b3) = (
                &brow(p)[..n],
                &brow(p + 1)[..n],
                &brow(p + 2)[..n],
                &brow(p + 3)[..n],
            );
            for j in 0..n {
                out[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
            }
            p += 4;
        }
        for p in p..inner {
            let (xp, bp) = (x(p), brow(p));
            for (o, v) in out.iter_mut().zip(bp) {
                *o += xp * v;
            }
        }
    }
}

/// `a [n, k] · b [k, m]`.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k, m) = matmul_dims("matmul", a, b)?;
    Tensor {
        shape: vec![n, m],
        data: gemm(n, k, m, &a.data, (k, 1), &b.data, (m, 1)),
    }
    .check_finite("matmul")
}

/// `g [n, m] · bᵀ` where `b` is `[k, m]`; result `[n, k]`.
pub(crate) fn matmul_a_bt(g: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (g.shape[0], g.shape[1]);
    let k = b.shape[0];
    Tensor {
        shape: vec![n, k],
        data: gemm(n, m, k, &g.data, (m, 1), &b.data, (1, m)),
    }
}

/// `aᵀ · g` where `a` is `[n, k]` and `g` is `[n, m]`; result `[k, m]`.
pub(crate) fn matmul_at_b(a: &Tensor, g: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = g.shape[1];
    Tensor {
        shape: vec![k, m],
        data: gemm(k, n, m, &a.data, (1, k), &g.data, (m, 1)),
    }
}

/// Concatenates along the last axis.
pub(crate) fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| invalid("concat: no operands"))?;
    let lead = &first.shape[..first.rank().saturating_sub(1)];
    for p in parts {
        if p.rank() != first.rank() || p.rank() == 0 || &p.shape[..p.rank() - 1] != lead {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
    }
    let rows: usize = lead.iter().product();
    let width: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            let w = p.last_dim();
            data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(width);
    Ok(Tensor { shape, data })
}

/// Columns `start..end` of the last axis.
pub(crate) fn slice(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    if a.rank() == 0 || start > end || end > a.last_dim() {
        return Err(invalid(format!(
            "slice: range {start}..{end} out of bounds for shape {:?}",
            a.shape
        )));
    }
    let w = a.last_dim();
    let rows = a.data.len() / w.max(1);
    let mut data = Vec::with_capacity(rows * (end - start));
    for r in 0..rows {
        data.extend_from_slice(&a.data[r * w + start..r * w + end]);
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = end - start;
    Ok(Tensor { shape, data })
}

/// Mean binary cross-entropy of `logits` against 0/1 `targets`.
pub(crate) fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if logits.shape != targets.shape {
        return Err(Error::ShapeMismatch {
            op: "bce_with_logits",
            lhs: logits.shape.clone(),
            rhs: targets.shape.clone(),
        });
    }
    if logits.is_empty() {
        return Err(invalid("bce_with_logits: empty batch"));
    }
    let total: f64 = logits
        .data
        .iter()
        .zip(&targets.data)
        .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum();
    Tensor::scalar(total / logits.len() as f64).check_finite("bce_with_logits")
}
