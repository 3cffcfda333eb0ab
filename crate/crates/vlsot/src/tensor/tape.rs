use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::params::{ParamId, ParamSet};
use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Recorded primitive operations. Parents always precede children, so a
/// single reverse sweep visits every node after all of its consumers.
#[derive(Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddRow { x: usize, row: usize },
    Scale { x: usize, c: f64 },
    Neg { x: usize },
    Exp { x: usize },
    Ln { x: usize },
    Sqrt { x: usize },
    Abs { x: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    Max2 { a: usize, b: usize },
    Min2 { a: usize, b: usize },
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Sum { x: usize },
    Mean { x: usize },
    MeanAxis0 { x: usize },
    Reshape { x: usize },
    SliceCols { x: usize, start: usize, len: usize },
    ConcatCols { xs: Rc<Vec<usize>> },
    ConcatRows { xs: Rc<Vec<usize>> },
    GatherRows { w: usize, idx: Rc<Vec<usize>> },
    /// Arbitrary gather; `map[i] < 0` reads an implicit zero (padding).
    Gather { x: usize, map: Rc<Vec<i64>> },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Records every primitive applied to its tensors so a reverse sweep can
/// accumulate exact gradients. One tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("tape node is well formed")
    }

    /// Gradient accumulated on `v` by [`Tape::backward`], if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            data,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(
            t.data().to_vec(),
            t.shape().to_vec(),
            Op::Leaf,
            requires_grad,
        )
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(vec![value], vec![1], Op::Leaf, false)
    }

    // ── primitives ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ash.clone(),
                rhs: bsh.clone(),
            });
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            m,
            k,
            n,
            &mut out,
        );
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(out, vec![m, n], Op::MatMul { a: a.0, b: b.0 }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let sh = &self.nodes[x.0].shape;
        if sh.len() != 2 {
            return Err(Error::invalid(format!("transpose expects a matrix, got {sh:?}")));
        }
        let (r, c) = (sh[0], sh[1]);
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.requires(x.0);
        Ok(self.push(out, vec![c, r], Op::Transpose { x: x.0 }, rg))
    }

    fn binary_same_shape(&mut self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(data, shape, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(data, shape, Op::Sub { a: a.0, b: b.0 }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(data, shape, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x / y);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(data, shape, Op::Div { a: a.0, b: b.0 }, rg))
    }

    /// Broadcast-add a row vector (shape `[n]` or `[1, n]`) to every row of
    /// a `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let n = *xs.last().unwrap();
        if self.nodes[row.0].data.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: xs,
                rhs: self.nodes[row.0].shape.clone(),
            });
        }
        let rowd = &self.nodes[row.0].data;
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(rowd).map(|(a, b)| a + b))
            .collect();
        let rg = self.requires(x.0) || self.requires(row.0);
        Ok(self.push(data, xs, Op::AddRow { x: x.0, row: row.0 }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Scale { x: x.0, c }, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| -v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Neg { x: x.0 }, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.exp()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Exp { x: x.0 }, rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Ln { x: x.0 }, rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.sqrt()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Sqrt { x: x.0 }, rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.abs()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Abs { x: x.0 }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Relu { x: x.0 }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Sigmoid { x: x.0 }, rg)
    }

    /// Clamp values to `[lo, hi]`; the gradient passes through strictly
    /// inside the range and is zero outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|v| v.clamp(lo, hi))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x.0);
        self.push(data, shape, Op::Clamp { x: x.0, lo, hi }, rg)
    }

    /// Elementwise maximum; ties route the gradient to the first argument.
    pub fn max2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("max2", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| {
            if x >= y {
                x
            } else {
                y
            }
        });
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(data, shape, Op::Max2 { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise minimum; ties route the gradient to the first argument.
    pub fn min2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("min2", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| {
            if x <= y {
                x
            } else {
                y
            }
        });
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(data, shape, Op::Min2 { a: a.0, b: b.0 }, rg))
    }

    /// Numerically stable softmax along `axis`: the slice maximum is
    /// subtracted before exponentiation, so each slice sums to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis,
                shape,
            });
        }
        let data = softmax_slices(&self.nodes[x.0].data, &shape, axis);
        let rg = self.requires(x.0);
        Ok(self.push(data, shape, Op::Softmax { x: x.0, axis }, rg))
    }

    /// Layer normalization over the last axis followed by the affine map
    /// `gamma * x_hat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or_else(|| {
            Error::invalid("layer_norm: zero-length last axis".to_string())
        })?;
        if d == 0 {
            return Err(Error::invalid("layer_norm: zero-length last axis".to_string()));
        }
        if self.nodes[gamma.0].data.len() != d || self.nodes[beta.0].data.len() != d {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.nodes[gamma.0].shape.clone(),
            });
        }
        let xd = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut out = vec![0.0; xd.len()];
        for (row, orow) in xd.chunks(d).zip(out.chunks_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let rg = self.requires(x.0) || self.requires(gamma.0) || self.requires(beta.0);
        Ok(self.push(
            out,
            shape,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.requires(x.0);
        self.push(vec![s], vec![1], Op::Sum { x: x.0 }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].data.len() as f64;
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.requires(x.0);
        self.push(vec![s / n], vec![1], Op::Mean { x: x.0 }, rg)
    }

    /// Mean over the first axis of a matrix: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 2 {
            return Err(Error::invalid(format!("mean_rows expects a matrix, got {sh:?}")));
        }
        let (m, n) = (sh[0], sh[1]);
        let mut out = vec![0.0; n];
        for row in self.nodes[x.0].data.chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let rg = self.requires(x.0);
        Ok(self.push(out, vec![1, n], Op::MeanAxis0 { x: x.0 }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.requires(x.0);
        Ok(self.push(data, shape, Op::Reshape { x: x.0 }, rg))
    }

    /// Column slice `[m, n] -> [m, len]` starting at `start`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 2 || start + len > sh[1] {
            return Err(Error::invalid(format!(
                "slice_cols [{start}, {}) out of range for shape {sh:?}",
                start + len
            )));
        }
        let (m, n) = (sh[0], sh[1]);
        let src = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.requires(x.0);
        Ok(self.push(out, vec![m, len], Op::SliceCols { x: x.0, start, len }, rg))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors".to_string()));
        }
        let m = self.nodes[xs[0].0].shape[0];
        let mut total = 0;
        for v in xs {
            let sh = &self.nodes[v.0].shape;
            if sh.len() != 2 || sh[0] != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[xs[0].0].shape.clone(),
                    rhs: sh.clone(),
                });
            }
            total += sh[1];
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for v in xs {
                let n = self.nodes[v.0].shape[1];
                out.extend_from_slice(&self.nodes[v.0].data[i * n..(i + 1) * n]);
            }
        }
        let rg = xs.iter().any(|v| self.requires(v.0));
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(out, vec![m, total], Op::ConcatCols { xs: Rc::new(ids) }, rg))
    }

    /// Concatenate matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat_rows of zero tensors".to_string()));
        }
        let n = *self.nodes[xs[0].0].shape.last().unwrap();
        let mut total = 0;
        for v in xs {
            let sh = &self.nodes[v.0].shape;
            if sh.len() != 2 || sh[1] != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[xs[0].0].shape.clone(),
                    rhs: sh.clone(),
                });
            }
            total += sh[0];
        }
        let mut out = Vec::with_capacity(n * total);
        for v in xs {
            out.extend_from_slice(&self.nodes[v.0].data);
        }
        let rg = xs.iter().any(|v| self.requires(v.0));
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(out, vec![total, n], Op::ConcatRows { xs: Rc::new(ids) }, rg))
    }

    /// Row lookup into a `[vocab, d]` matrix: the embedding gather.
    pub fn gather_rows(&mut self, w: Var, idx: &[usize]) -> Result<Var> {
        let sh = self.nodes[w.0].shape.clone();
        if sh.len() != 2 {
            return Err(Error::invalid(format!("gather_rows expects a matrix, got {sh:?}")));
        }
        let (rows, d) = (sh[0], sh[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let src = &self.nodes[w.0].data;
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.requires(w.0);
        Ok(self.push(
            out,
            vec![idx.len(), d],
            Op::GatherRows {
                w: w.0,
                idx: Rc::new(idx.to_vec()),
            },
            rg,
        ))
    }

    /// Arbitrary element gather with zero padding for negative map entries.
    /// The map length defines the flat output; `shape` must match it.
    pub fn gather(&mut self, x: Var, map: Rc<Vec<i64>>, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != map.len() {
            return Err(Error::invalid(format!(
                "gather: map length {} does not match shape {shape:?}",
                map.len()
            )));
        }
        let src = &self.nodes[x.0].data;
        let n = src.len() as i64;
        if let Some(&bad) = map.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "gather: index {bad} out of range for {n} elements"
            )));
        }
        let out: Vec<f64> = map
            .iter()
            .map(|&i| if i < 0 { 0.0 } else { src[i as usize] })
            .collect();
        let rg = self.requires(x.0);
        Ok(self.push(out, shape, Op::Gather { x: x.0, map }, rg))
    }

    // ── reverse sweep ───────────────────────────────────────────────

    /// Accumulate `d loss / d node` for every node that requires a
    /// gradient. Repeated calls without [`Tape::reset_grads`] accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::invalid(
                "backward on a loss detached from every differentiable leaf".to_string(),
            ));
        }
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        scratch[loss.0] = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = scratch[i].clone() else { continue };
            let op = self.nodes[i].op.clone();
            self.backprop_one(i, &grad, &op, &mut scratch);
        }
        self.grads.resize(self.nodes.len(), None);
        for (i, s) in scratch.into_iter().enumerate() {
            if let Some(sv) = s {
                let slot = self.grads[i].get_or_insert_with(|| vec![0.0; sv.len()]);
                for (acc, v) in slot.iter_mut().zip(&sv) {
                    *acc += v;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, update: &[f64]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let slot =
            grads[target].get_or_insert_with(|| vec![0.0; self.nodes[target].data.len()]);
        for (s, u) in slot.iter_mut().zip(update) {
            *s += u;
        }
    }

    fn backprop_one(&self, i: usize, grad: &[f64], op: &Op, grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                if self.nodes[*a].requires_grad {
                    // dA[i,p] = sum_j dC[i,j] * B[p,j]
                    let bd = &self.nodes[*b].data;
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let gr = &grad[r * n..(r + 1) * n];
                        for p in 0..k {
                            let br = &bd[p * n..(p + 1) * n];
                            da[r * k + p] = dot(gr, br);
                        }
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    // dB[p,j] += A[i,p] * dC[i,j]
                    let ad = &self.nodes[*a].data;
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let gr = &grad[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av != 0.0 {
                                axpy(av, gr, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let mut dx = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        dx[b * r + a] = grad[a * c + b];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, grad);
                self.accumulate(grads, *b, grad);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, grad);
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul { a, b } => {
                if self.nodes[*a].requires_grad {
                    let da = zip_map(grad, &self.nodes[*b].data, |g, y| g * y);
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db = zip_map(grad, &self.nodes[*a].data, |g, x| g * x);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Div { a, b } => {
                let bd = &self.nodes[*b].data;
                if self.nodes[*a].requires_grad {
                    let da = zip_map(grad, bd, |g, y| g / y);
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let ad = &self.nodes[*a].data;
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::AddRow { x, row } => {
                self.accumulate(grads, *x, grad);
                if self.nodes[*row].requires_grad {
                    let n = self.nodes[*row].data.len();
                    let mut dr = vec![0.0; n];
                    for chunk in grad.chunks(n) {
                        for (d, g) in dr.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    self.accumulate(grads, *row, &dr);
                }
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = grad.iter().map(|g| g * c).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Neg { x } => {
                let dx: Vec<f64> = grad.iter().map(|g| -g).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Exp { x } => {
                let dx = zip_map(grad, &self.nodes[i].data, |g, e| g * e);
                self.accumulate(grads, *x, &dx);
            }
            Op::Ln { x } => {
                let dx = zip_map(grad, &self.nodes[*x].data, |g, v| g / v);
                self.accumulate(grads, *x, &dx);
            }
            Op::Sqrt { x } => {
                let dx = zip_map(grad, &self.nodes[i].data, |g, s| g / (2.0 * s));
                self.accumulate(grads, *x, &dx);
            }
            Op::Abs { x } => {
                let dx = zip_map(grad, &self.nodes[*x].data, |g, v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, &dx);
            }
            Op::Relu { x } => {
                let dx = zip_map(grad, &self.nodes[*x].data, |g, v| if v > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *x, &dx);
            }
            Op::Sigmoid { x } => {
                let dx = zip_map(grad, &self.nodes[i].data, |g, s| g * s * (1.0 - s));
                self.accumulate(grads, *x, &dx);
            }
            Op::Clamp { x, lo, hi } => {
                let dx = zip_map(grad, &self.nodes[*x].data, |g, v| {
                    if v > *lo && v < *hi {
                        g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, &dx);
            }
            Op::Max2 { a, b } => {
                let (ad, bd) = (&self.nodes[*a].data, &self.nodes[*b].data);
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(g, (x, y))| if x >= y { *g } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(g, (x, y))| if x >= y { 0.0 } else { *g })
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Min2 { a, b } => {
                let (ad, bd) = (&self.nodes[*a].data, &self.nodes[*b].data);
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(g, (x, y))| if x <= y { *g } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(g, (x, y))| if x <= y { 0.0 } else { *g })
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Softmax { x, axis } => {
                // ds_j = s_j * (g_j - sum_k g_k s_k) per slice
                let out = &self.nodes[i].data;
                let shape = &self.nodes[i].shape;
                let axis_len = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut dx = vec![0.0; out.len()];
                for o in 0..outer {
                    for r in 0..inner {
                        let mut dotv = 0.0;
                        for a in 0..axis_len {
                            let f = o * axis_len * inner + a * inner + r;
                            dotv += grad[f] * out[f];
                        }
                        for a in 0..axis_len {
                            let f = o * axis_len * inner + a * inner + r;
                            dx[f] = out[f] * (grad[f] - dotv);
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let xd = &self.nodes[*x].data;
                let gd = &self.nodes[*gamma].data;
                let d = gd.len();
                let rows = xd.len() / d;
                let mut dx = vec![0.0; xd.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let mut dxhat = vec![0.0; d];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        dxhat[j] = grow[j] * gd[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    let df = d as f64;
                    for j in 0..d {
                        dx[r * d + j] = inv_std / df
                            * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gamma, &dgamma);
                self.accumulate(grads, *beta, &dbeta);
            }
            Op::Sum { x } => {
                let dx = vec![grad[0]; self.nodes[*x].data.len()];
                self.accumulate(grads, *x, &dx);
            }
            Op::Mean { x } => {
                let n = self.nodes[*x].data.len();
                let dx = vec![grad[0] / n as f64; n];
                self.accumulate(grads, *x, &dx);
            }
            Op::MeanAxis0 { x } => {
                let (m, n) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for j in 0..n {
                        dx[r * n + j] = grad[j] / m as f64;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, grad);
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len]
                        .copy_from_slice(&grad[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::ConcatCols { xs } => {
                let m = self.nodes[i].shape[0];
                let total = self.nodes[i].shape[1];
                let mut offset = 0;
                for &xid in xs.iter() {
                    let n = self.nodes[xid].shape[1];
                    if self.nodes[xid].requires_grad {
                        let mut dx = vec![0.0; m * n];
                        for r in 0..m {
                            dx[r * n..(r + 1) * n]
                                .copy_from_slice(&grad[r * total + offset..r * total + offset + n]);
                        }
                        self.accumulate(grads, xid, &dx);
                    }
                    offset += n;
                }
            }
            Op::ConcatRows { xs } => {
                let mut offset = 0;
                for &xid in xs.iter() {
                    let len = self.nodes[xid].data.len();
                    if self.nodes[xid].requires_grad {
                        self.accumulate(grads, xid, &grad[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { w, idx } => {
                let d = self.nodes[*w].shape[1];
                let mut dw = vec![0.0; self.nodes[*w].data.len()];
                for (r, &row) in idx.iter().enumerate() {
                    for j in 0..d {
                        dw[row * d + j] += grad[r * d + j];
                    }
                }
                self.accumulate(grads, *w, &dw);
            }
            Op::Gather { x, map } => {
                let mut dx = vec![0.0; self.nodes[*x].data.len()];
                for (g, &src) in grad.iter().zip(map.iter()) {
                    if src >= 0 {
                        dx[src as usize] += g;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
        }
    }
}

/// Forward-pass context binding a [`ParamSet`] to a fresh tape. Parameters
/// become differentiable leaves on first use; dropout draws from a seeded
/// stream so identical seeds replay identical masks.
pub struct Graph<'p> {
    pub tape: Tape,
    params: &'p ParamSet,
    bound: Vec<Option<Var>>,
    train: bool,
    dropout: f64,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet, train: bool, dropout: f64, seed: u64) -> Self {
        Graph {
            tape: Tape::new(),
            bound: vec![None; params.len()],
            params,
            train,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Evaluation-mode graph: parameters are frozen, dropout disabled.
    pub fn inference(params: &'p ParamSet) -> Self {
        Graph::new(params, false, 0.0, 0)
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Bind a parameter as a tape leaf (cached per graph).
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = self.tape.leaf(self.params.value(id), self.train);
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Inverted dropout: identity at evaluation or rate zero.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let shape = self.tape.shape(x).to_vec();
        let numel: usize = shape.iter().product();
        let mask: Vec<f64> = (0..numel)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.tape.constant(&Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    /// Extract accumulated parameter gradients after a backward pass.
    pub fn take_param_grads(&mut self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out = Vec::new();
        for (index, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = self.tape.grad(*v) {
                    out.push((ParamId::from_index(index), g.to_vec()));
                }
            }
        }
        out
    }
}

// ── kernels ─────────────────────────────────────────────────────────

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

fn softmax_slices(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for r in 0..inner {
            let at = |a: usize| o * axis_len * inner + a * inner + r;
            let mut max = f64::NEG_INFINITY;
            for a in 0..axis_len {
                max = max.max(data[at(a)]);
            }
            let mut sum = 0.0;
            for a in 0..axis_len {
                let e = (data[at(a)] - max).exp();
                out[at(a)] = e;
                sum += e;
            }
            for a in 0..axis_len {
                out[at(a)] /= sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i2 = t.constant(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = t.constant(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = t.matmul(i2, a).unwrap();
        assert_eq!(t.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.constant(&Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::zeros(vec![2, 3]));
        let b = t.constant(&Tensor::zeros(vec![2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_hand_case() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let s = t.softmax(x, 0).unwrap();
        assert_close(t.value(s), &[1.0 / 3.0; 3], 1e-12);

        let x2 = t.constant(&Tensor::from_vec(vec![0.0, 2.0_f64.ln()]));
        let s2 = t.softmax(x2, 0).unwrap();
        assert_close(t.value(s2), &[1.0 / 3.0, 2.0 / 3.0], 1e-12);
    }

    #[test]
    fn softmax_large_logits_stable() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::from_vec(vec![1000.0, 0.0]));
        let s = t.softmax(x, 0).unwrap();
        let v = t.value(s);
        assert!(v[0] > 0.999_999 && v.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn softmax_axis_out_of_range() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::from_vec(vec![1.0, 2.0]));
        assert!(t.softmax(x, 1).is_err());
    }

    #[test]
    fn layer_norm_constant_row_maps_to_beta() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::matrix(1, 3, vec![5.0, 5.0, 5.0]).unwrap());
        let g = t.constant(&Tensor::from_vec(vec![1.0, 1.0, 1.0]));
        let b = t.constant(&Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        assert_close(t.value(y), &[0.0, 0.0, 0.0], 1e-6);
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        let g = t.constant(&Tensor::from_vec(vec![1.0, 1.0]));
        let b = t.constant(&Tensor::from_vec(vec![0.0, 0.0]));
        let y = t.layer_norm(x, g, b, 1e-14).unwrap();
        assert_close(t.value(y), &[-1.0, 1.0], 1e-6);
    }

    #[test]
    fn layer_norm_zero_gamma_collapses_to_beta() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::matrix(2, 2, vec![3.0, -1.0, 9.0, 4.0]).unwrap());
        let g = t.constant(&Tensor::from_vec(vec![0.0, 0.0]));
        let b = t.constant(&Tensor::from_vec(vec![0.7, -0.2]));
        let y = t.layer_norm(x, g, b, 1e-9).unwrap();
        assert_close(t.value(y), &[0.7, -0.2, 0.7, -0.2], 1e-12);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::matrix(2, 3, vec![1.0; 6]).unwrap(), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_elementwise_square() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(t.backward(x).is_err());

        let mut t2 = Tape::new();
        let c = t2.constant_scalar(4.0);
        let s = t2.sum(c);
        assert!(t2.backward(s).is_err());
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::from_vec(vec![2.0]), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0]);
        t.reset_grads();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn gather_scatters_gradient_back() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
        let map = Rc::new(vec![2i64, -1, 0, 2]);
        let y = t.gather(x, map, vec![4]).unwrap();
        assert_eq!(t.value(y), &[3.0, 0.0, 1.0, 3.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn dropout_identity_in_eval() {
        let params = ParamSet::new();
        let mut g = Graph::new(&params, false, 0.5, 7);
        let x = g.constant(&Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.dropout(x).unwrap();
        assert_eq!(g.tape.value(y), &[1.0, 2.0]);
    }
}
