//! Tape-based reverse-mode differentiation.
//!
//! Every kernel appends one node holding its output and enough information to
//! run its backward rule. Nodes are appended in evaluation order, so the tape
//! is topologically sorted by construction and a single reverse sweep visits
//! each node exactly once.

use std::sync::Arc;

use super::dense::{matrix_dims, Tensor};
use super::gemm;
use crate::error::{Error, Result};

/// `layer_norm` variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-6;
const NORM_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
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
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    AddBias(Var, Var),
    MulBias(Var, Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Gather { x: Var, index: Arc<Vec<Option<usize>>> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims_of(shape: &[usize]) -> (usize, usize) {
    matrix_dims(shape)
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

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a tensor. It takes part in differentiation when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Records a constant (never differentiated) from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims_of(&self.nodes[v.0].shape)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn matrix_shape(&self, v: Var) -> Vec<usize> {
        let (r, c) = self.dims(v);
        vec![r, c]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm::matmul(m, k, n, self.value(a), false, self.value(b), false, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), ng))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, rec, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, rec: Op) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, rec, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Numeric {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.map(x, f64::ln, Op::Log(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Normalises every row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x);
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, inv_std }, ng)
    }

    fn check_row_vector(&self, op: &'static str, x: Var, b: Var) -> Result<(usize, usize)> {
        let (r, c) = self.dims(x);
        if self.nodes[b.0].data.len() != c {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok((r, c))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.check_row_vector("add_bias", x, bias)?;
        let (xs, bs) = (self.value(x), self.value(bias));
        let mut out = xs.to_vec();
        for i in 0..r {
            out[i * c..(i + 1) * c]
                .iter_mut()
                .zip(bs)
                .for_each(|(o, b)| *o += b);
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, bias), ng))
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_bias(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (r, c) = self.check_row_vector("mul_bias", x, gain)?;
        let (xs, gs) = (self.value(x), self.value(gain));
        let mut out = xs.to_vec();
        for i in 0..r {
            out[i * c..(i + 1) * c]
                .iter_mut()
                .zip(gs)
                .for_each(|(o, g)| *o *= g);
        }
        let ng = self.ng(x) || self.ng(gain);
        Ok(self.push(self.shape(x).to_vec(), out, Op::MulBias(x, gain), ng))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start > end || end > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![r, w], out, Op::SliceCols { x, start }, ng))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start > end || end > r {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, end],
            });
        }
        let out = self.value(x)[start * c..end * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(vec![end - start, c], out, Op::SliceRows { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let r = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let c = self.dims(first).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(p));
            rows += pr;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![rows, c], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(x);
        self.push(vec![c, r], out, Op::Transpose(x), ng)
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), ng))
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![], vec![s], Op::Sum(x), ng)
    }

    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(vec![], vec![s], Op::Mean(x), ng)
    }

    fn check_finite(&self, op: &'static str, x: Var) -> Result<()> {
        if self.value(x).iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric {
                op,
                detail: "NaN input".into(),
            });
        }
        Ok(())
    }

    /// Row-wise softmax, stabilised by subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check_finite("softmax_rows", x)?;
        let (r, c) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        let ng = self.ng(x);
        Ok(self.push(self.matrix_shape(x), out, Op::SoftmaxRows(x), ng))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check_finite("log_softmax_rows", x)?;
        let (r, c) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.ng(x);
        Ok(self.push(self.matrix_shape(x), out, Op::LogSoftmaxRows(x), ng))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).to_vec();
        let mut norms = vec![0.0; r];
        for (i, row) in out.chunks_mut(c.max(1)).take(r).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            norms[i] = n;
            row.iter_mut().for_each(|v| *v /= n);
        }
        let ng = self.ng(x);
        self.push(self.matrix_shape(x), out, Op::L2NormalizeRows { x, norms }, ng)
    }

    /// `out[k] = x[index[k]]`, or zero where the index is `None`.
    ///
    /// Backward scatter-adds, so repeated indices accumulate.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<Option<usize>>>, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if shape.iter().product::<usize>() != index.len() || index.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Dimension {
                op: "gather",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let src = self.value(x);
        let out: Vec<f64> = index.iter().map(|i| i.map_or(0.0, |i| src[i])).collect();
        let ng = self.ng(x);
        Ok(self.push(shape.to_vec(), out, Op::Gather { x, index }, ng))
    }

    /// Reverse sweep from a scalar loss. Gradients of earlier calls are
    /// discarded; read them with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Copies accumulated gradients for `vars` into the matching tensors'
    /// `grad` fields (only those with `requires_grad`).
    pub fn write_grads<'a>(&self, params: impl IntoIterator<Item = (&'a mut Tensor, Var)>) {
        for (t, v) in params {
            if !t.requires_grad {
                continue;
            }
            match self.grad(v) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].data.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = dims_of(&nodes[a.0].shape);
                let n = dims_of(&nodes[b.0].shape).1;
                acc(*a, &mut |ga| {
                    gemm::matmul_acc(m, n, k, g, false, &nodes[b.0].data, true, ga)
                });
                acc(*b, &mut |gb| {
                    gemm::matmul_acc(k, m, n, &nodes[a.0].data, true, g, false, gb)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, g)| *o -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, g)| *o += s * g)),
            Op::AddScalar(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Exp(x) => {
                let y = &node.data;
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * y[i];
                    }
                })
            }
            Op::Log(x) => {
                let xv = &nodes[x.0].data;
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] / xv[i];
                    }
                })
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].data;
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                })
            }
            Op::LayerNorm { x, inv_std } => {
                let (r, c) = dims_of(&node.shape);
                let y = &node.data;
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] += inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                })
            }
            Op::AddBias(x, b) => {
                let c = dims_of(&node.shape).1;
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MulBias(x, w) => {
                let c = dims_of(&node.shape).1;
                let (xv, wv) = (&nodes[x.0].data, &nodes[w.0].data);
                acc(*x, &mut |gx| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += g[i] * wv[i % c];
                    }
                });
                acc(*w, &mut |gw| {
                    for (i, gi) in g.iter().enumerate() {
                        gw[i % c] += gi * xv[i];
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (r, w) = dims_of(&node.shape);
                let c = dims_of(&nodes[x.0].shape).1;
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        add_into(&mut gx[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                    }
                })
            }
            Op::SliceRows { x, start } => {
                let c = dims_of(&node.shape).1;
                acc(*x, &mut |gx| add_into(&mut gx[start * c..start * c + g.len()], g))
            }
            Op::ConcatCols(parts) => {
                let (r, total) = dims_of(&node.shape);
                let mut off = 0;
                for p in parts {
                    let c = dims_of(&nodes[p.0].shape).1;
                    acc(*p, &mut |gp| {
                        for i in 0..r {
                            add_into(&mut gp[i * c..(i + 1) * c], &g[i * total + off..i * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].data.len();
                    acc(*p, &mut |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Transpose(x) => {
                let (r, c) = dims_of(&nodes[x.0].shape);
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = nodes[x.0].data.len().max(1) as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::SoftmaxRows(x) => {
                let c = dims_of(&node.shape).1;
                let y = &node.data;
                acc(*x, &mut |gx| {
                    for (i, (gr, yr)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmaxRows(x) => {
                let c = dims_of(&node.shape).1;
                let y = &node.data;
                acc(*x, &mut |gx| {
                    for (i, (gr, yr)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            gx[i * c + j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                })
            }
            Op::L2NormalizeRows { x, norms } => {
                let c = dims_of(&node.shape).1;
                let y = &node.data;
                acc(*x, &mut |gx| {
                    for (i, (gr, yr)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                })
            }
            Op::Gather { x, index } => acc(*x, &mut |gx| {
                for (k, i) in index.iter().enumerate() {
                    if let Some(i) = i {
                        gx[*i] += g[k];
                    }
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
