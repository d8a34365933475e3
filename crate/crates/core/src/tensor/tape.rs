//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! creation order, which is also a topological order of the computation.
//! [`Tape::backward`] walks that order in reverse and accumulates gradients
//! additively, so a value consumed by several operations receives the sum of
//! their contributions.

use std::cell::{Ref, RefCell};

use super::dense::{gemm, gemm_nt, gemm_tn, Tensor};
use super::kernels::{self, Dims3, LstmCache};
use crate::error::{Error, Result};

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Sum(usize),
    Reshape(usize),
    ConcatCols(Vec<usize>),
    NarrowCols {
        input: usize,
        start: usize,
    },
    GatherRows {
        input: usize,
        index: Vec<Option<usize>>,
    },
    SelectRows {
        mask: Vec<bool>,
        on: usize,
        off: usize,
    },
    Conv3d {
        input: usize,
        kernels: usize,
        bias: usize,
        batch: usize,
        c_in: usize,
        c_out: usize,
        dims: Dims3,
    },
    MaxPool3d {
        input: usize,
        argmax: Vec<usize>,
    },
    LstmCell {
        x: usize,
        h: usize,
        c: usize,
        w_ih: usize,
        w_hh: usize,
        bias: usize,
        cache: LstmCache,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for a single forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.id].clone(), g.clone()).expect("grad shape"))
    }

    /// Gradient for `var`, zeros when it did not influence the loss.
    pub fn get_or_zero(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::dim(op, s, &[0, 0])),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn req(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Trainable leaf: gradients are tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&self, a: Var<'_>, b: Var<'_>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value)?
        };
        Ok(self.push(value, Op::MatMul(a.id, b.id), self.req(&[a.id, b.id])))
    }

    pub fn add(&self, a: Var<'_>, b: Var<'_>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.id].value, &nodes[b.id].value);
            if x.shape() != y.shape() {
                return Err(Error::dim("add", x.shape(), y.shape()));
            }
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.push(value, Op::Add(a.id, b.id), self.req(&[a.id, b.id])))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&self, a: Var<'_>, bias: Var<'_>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, b) = (&nodes[a.id].value, &nodes[bias.id].value);
            let (_, n) = check_matrix("add_row", x)?;
            if b.len() != n {
                return Err(Error::dim("add_row", x.shape(), b.shape()));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.push(value, Op::AddRow(a.id, bias.id), self.req(&[a.id, bias.id])))
    }

    pub fn mul(&self, a: Var<'_>, b: Var<'_>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.id].value, &nodes[b.id].value);
            if x.shape() != y.shape() {
                return Err(Error::dim("mul", x.shape(), y.shape()));
            }
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.push(value, Op::Mul(a.id, b.id), self.req(&[a.id, b.id])))
    }

    pub fn scale(&self, a: Var<'_>, factor: f64) -> Var<'_> {
        let value = self.nodes.borrow()[a.id].value.map(|v| v * factor);
        self.push(value, Op::Scale(a.id, factor), self.req(&[a.id]))
    }

    pub fn relu(&self, a: Var<'_>) -> Var<'_> {
        let value = self.nodes.borrow()[a.id].value.map(|v| v.max(0.0));
        self.push(value, Op::Relu(a.id), self.req(&[a.id]))
    }

    pub fn sigmoid(&self, a: Var<'_>) -> Var<'_> {
        let value = self.nodes.borrow()[a.id].value.map(kernels::sigmoid);
        self.push(value, Op::Sigmoid(a.id), self.req(&[a.id]))
    }

    pub fn tanh(&self, a: Var<'_>) -> Var<'_> {
        let value = self.nodes.borrow()[a.id].value.map(f64::tanh);
        self.push(value, Op::Tanh(a.id), self.req(&[a.id]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self, a: Var<'_>) -> Var<'_> {
        let value = Tensor::scalar(self.nodes.borrow()[a.id].value.sum());
        self.push(value, Op::Sum(a.id), self.req(&[a.id]))
    }

    pub fn reshape(&self, a: Var<'_>, shape: &[usize]) -> Result<Var<'_>> {
        let value = self.nodes.borrow()[a.id].value.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a.id), self.req(&[a.id])))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].id].value.shape().to_vec();
            let rows = check_matrix("concat_cols", &nodes[parts[0].id].value)?.0;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, c) = check_matrix("concat_cols", &nodes[p.id].value)?;
                if r != rows {
                    return Err(Error::dim(
                        "concat_cols",
                        &first,
                        nodes[p.id].value.shape(),
                    ));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    out.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            Tensor::new(vec![rows, total], out)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let req = self.req(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), req))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn narrow_cols(&self, a: Var<'_>, start: usize, len: usize) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.id].value;
            let (rows, cols) = check_matrix("narrow_cols", x)?;
            if start + len > cols {
                return Err(Error::dim("narrow_cols", x.shape(), &[start, len]));
            }
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&x.row(r)[start..start + len]);
            }
            Tensor::new(vec![rows, len], out)?
        };
        Ok(self.push(value, Op::NarrowCols { input: a.id, start }, self.req(&[a.id])))
    }

    /// Row `i` of the output is row `index[i]` of `a`, or zeros for `None`.
    pub fn gather_rows(&self, a: Var<'_>, index: Vec<Option<usize>>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.id].value;
            let (rows, cols) = check_matrix("gather_rows", x)?;
            let mut out = vec![0.0; index.len() * cols];
            for (i, src) in index.iter().enumerate() {
                if let Some(s) = *src {
                    if s >= rows {
                        return Err(Error::dim("gather_rows", x.shape(), &[s]));
                    }
                    out[i * cols..(i + 1) * cols].copy_from_slice(x.row(s));
                }
            }
            Tensor::new(vec![index.len(), cols], out)?
        };
        Ok(self.push(value, Op::GatherRows { input: a.id, index }, self.req(&[a.id])))
    }

    /// Row-wise choice: rows with `mask[i]` come from `on`, others from `off`.
    pub fn select_rows(&self, mask: Vec<bool>, on: Var<'_>, off: Var<'_>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (a, b) = (&nodes[on.id].value, &nodes[off.id].value);
            if a.shape() != b.shape() || a.rows() != mask.len() {
                return Err(Error::dim("select_rows", a.shape(), b.shape()));
            }
            let cols = a.cols();
            let mut out = Vec::with_capacity(a.len());
            for (r, &m) in mask.iter().enumerate() {
                out.extend_from_slice(if m { a.row(r) } else { b.row(r) });
            }
            debug_assert_eq!(out.len(), mask.len() * cols);
            Tensor::new(a.shape().to_vec(), out)?
        };
        let req = self.req(&[on.id, off.id]);
        Ok(self.push(
            value,
            Op::SelectRows {
                mask,
                on: on.id,
                off: off.id,
            },
            req,
        ))
    }

    /// Same-padded 3×3×3 convolution over a batch `[N × C_in × D × H × W]`
    /// (a 4-D input is treated as a batch of one).
    pub fn conv3d(&self, input: Var<'_>, kernels: Var<'_>, bias: Var<'_>) -> Result<Var<'_>> {
        let (value, batch, c_in, c_out, dims) = {
            let nodes = self.nodes.borrow();
            let (x, k, b) = (
                &nodes[input.id].value,
                &nodes[kernels.id].value,
                &nodes[bias.id].value,
            );
            let (batch, c_in, dims, four_d) = match x.shape() {
                [c, d, h, w] => (1, *c, Dims3 { d: *d, h: *h, w: *w }, true),
                [n, c, d, h, w] => (*n, *c, Dims3 { d: *d, h: *h, w: *w }, false),
                s => return Err(Error::dim("conv3d", s, k.shape())),
            };
            let c_out = match k.shape() {
                [co, ci, 3, 3, 3] if *ci == c_in => *co,
                [_, ci, kd, kh, kw] if *ci == c_in => {
                    return Err(Error::Unsupported(format!(
                        "conv3d kernel {kd}×{kh}×{kw}; only 3×3×3 is supported"
                    )))
                }
                s => return Err(Error::dim("conv3d", x.shape(), s)),
            };
            if b.len() != c_out {
                return Err(Error::dim("conv3d bias", k.shape(), b.shape()));
            }
            if dims.d < 3 || dims.h < 3 || dims.w < 3 {
                return Err(Error::dim("conv3d spatial", x.shape(), &[3, 3, 3]));
            }
            let out =
                kernels::conv3d_forward(x.data(), k.data(), b.data(), batch, c_in, c_out, dims);
            let shape = if four_d {
                vec![c_out, dims.d, dims.h, dims.w]
            } else {
                vec![batch, c_out, dims.d, dims.h, dims.w]
            };
            (Tensor::new(shape, out)?, batch, c_in, c_out, dims)
        };
        let req = self.req(&[input.id, kernels.id, bias.id]);
        Ok(self.push(
            value,
            Op::Conv3d {
                input: input.id,
                kernels: kernels.id,
                bias: bias.id,
                batch,
                c_in,
                c_out,
                dims,
            },
            req,
        ))
    }

    /// 2×2×2 max pooling with stride 2 over the trailing three axes.
    pub fn maxpool3d(&self, input: Var<'_>) -> Result<Var<'_>> {
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[input.id].value;
            let s = x.shape();
            if s.len() < 4 {
                return Err(Error::dim("maxpool3d", s, &[0, 0, 0, 0]));
            }
            let r = s.len();
            let dims = Dims3 {
                d: s[r - 3],
                h: s[r - 2],
                w: s[r - 1],
            };
            if dims.d % 2 != 0 || dims.h % 2 != 0 || dims.w % 2 != 0 {
                return Err(Error::dim("maxpool3d (odd extent)", s, &[2, 2, 2]));
            }
            let channels: usize = s[..r - 3].iter().product();
            let (out, arg) = kernels::maxpool3d_forward(x.data(), channels, dims);
            let mut shape = s[..r - 3].to_vec();
            shape.extend([dims.d / 2, dims.h / 2, dims.w / 2]);
            (Tensor::new(shape, out)?, arg)
        };
        Ok(self.push(
            value,
            Op::MaxPool3d {
                input: input.id,
                argmax,
            },
            self.req(&[input.id]),
        ))
    }

    /// One LSTM step over a batch of rows. `x` is `[B×d]`, `h`/`c` are
    /// `[B×k]`, `w_ih` is `[d×4k]`, `w_hh` is `[k×4k]`, `bias` has `4k`
    /// entries; gate blocks are ordered input, forget, cell, output.
    /// Returns `[B×2k]` holding the new hidden state then the new cell state.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &self,
        x: Var<'_>,
        h: Var<'_>,
        c: Var<'_>,
        w_ih: Var<'_>,
        w_hh: Var<'_>,
        bias: Var<'_>,
    ) -> Result<Var<'_>> {
        let (value, cache) = {
            let nodes = self.nodes.borrow();
            let (xv, hv, cv) = (
                &nodes[x.id].value,
                &nodes[h.id].value,
                &nodes[c.id].value,
            );
            let (wi, wh, bv) = (
                &nodes[w_ih.id].value,
                &nodes[w_hh.id].value,
                &nodes[bias.id].value,
            );
            let (batch, d) = check_matrix("lstm_cell x", xv)?;
            let (hb, k) = check_matrix("lstm_cell h", hv)?;
            if hb != batch || cv.shape() != hv.shape() {
                return Err(Error::dim("lstm_cell state", hv.shape(), cv.shape()));
            }
            if wi.shape() != [d, 4 * k] {
                return Err(Error::dim("lstm_cell w_ih", wi.shape(), &[d, 4 * k]));
            }
            if wh.shape() != [k, 4 * k] {
                return Err(Error::dim("lstm_cell w_hh", wh.shape(), &[k, 4 * k]));
            }
            if bv.len() != 4 * k {
                return Err(Error::dim("lstm_cell bias", bv.shape(), &[4 * k]));
            }
            let mut pre = Vec::with_capacity(batch * 4 * k);
            for _ in 0..batch {
                pre.extend_from_slice(bv.data());
            }
            gemm(xv.data(), wi.data(), &mut pre, batch, d, 4 * k);
            gemm(hv.data(), wh.data(), &mut pre, batch, k, 4 * k);
            let (out, cache) = kernels::lstm_activate(&mut pre, cv.data(), batch, k);
            (Tensor::new(vec![batch, 2 * k], out)?, cache)
        };
        let req = self.req(&[x.id, h.id, c.id, w_ih.id, w_hh.id, bias.id]);
        Ok(self.push(
            value,
            Op::LstmCell {
                x: x.id,
                h: h.id,
                c: c.id,
                w_ih: w_ih.id,
                w_hh: w_hh.id,
                bias: bias.id,
                cache,
            },
            req,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&self, logits: Var<'_>, labels: &[usize]) -> Result<Var<'_>> {
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let z = &nodes[logits.id].value;
            let (rows, classes) = check_matrix("softmax_cross_entropy", z)?;
            if labels.len() != rows {
                return Err(Error::Contract(format!(
                    "{} labels for {rows} logit rows",
                    labels.len()
                )));
            }
            if rows == 0 {
                return Err(Error::Degenerate("cross entropy over zero rows".into()));
            }
            let mut probs = vec![0.0; rows * classes];
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(Error::InvalidLabel { label, classes });
                }
                let row = z.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_norm = max + sum_exp.ln();
                total += log_norm - row[label];
                for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                    *p = (v - log_norm).exp();
                }
            }
            (total / rows as f64, probs)
        };
        let req = self.req(&[logits.id]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                labels: labels.to_vec(),
                probs,
            },
            req,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]))
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, delta: &[f64]) {
    if let Some(s) = slot(nodes, grads, id) {
        for (a, d) in s.iter_mut().zip(delta) {
            *a += d;
        }
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm_nt(g, bv.data(), ga, m, n, k);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm_tn(av.data(), g, gb, k, m, n);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, g);
        }
        Op::AddRow(a, bias) => {
            accumulate(nodes, grads, *a, g);
            let n = nodes[*bias].value.len();
            if let Some(gb) = slot(nodes, grads, *bias) {
                for row in g.chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((acc, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                    *acc += gv * y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for ((acc, gv), x) in gb.iter_mut().zip(g).zip(av) {
                    *acc += gv * x;
                }
            }
        }
        Op::Scale(a, factor) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (acc, gv) in ga.iter_mut().zip(g) {
                    *acc += factor * gv;
                }
            }
        }
        Op::Relu(a) => {
            let x = nodes[*a].value.data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((acc, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *acc += gv;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((acc, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    *acc += gv * yv * (1.0 - yv);
                }
            }
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((acc, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    *acc += gv * (1.0 - yv * yv);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for acc in ga.iter_mut() {
                    *acc += g[0];
                }
            }
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, g),
        Op::ConcatCols(parts) => {
            let rows = node.value.rows();
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let width = nodes[p].value.cols();
                if let Some(gp) = slot(nodes, grads, p) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + width];
                        for (acc, v) in gp[r * width..(r + 1) * width].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                offset += width;
            }
        }
        Op::NarrowCols { input, start } => {
            let cols = nodes[*input].value.cols();
            let len = node.value.cols();
            if let Some(gi) = slot(nodes, grads, *input) {
                for (r, src) in g.chunks(len).enumerate() {
                    let dst = &mut gi[r * cols + start..r * cols + start + len];
                    for (acc, v) in dst.iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
        }
        Op::GatherRows { input, index } => {
            let cols = node.value.cols();
            if let Some(gi) = slot(nodes, grads, *input) {
                for (i, src) in index.iter().enumerate() {
                    if let Some(s) = *src {
                        let dst = &mut gi[s * cols..(s + 1) * cols];
                        for (acc, v) in dst.iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                            *acc += v;
                        }
                    }
                }
            }
        }
        Op::SelectRows { mask, on, off } => {
            let cols = node.value.cols();
            for (target, want) in [(*on, true), (*off, false)] {
                if let Some(gt) = slot(nodes, grads, target) {
                    for (r, &m) in mask.iter().enumerate() {
                        if m == want {
                            let range = r * cols..(r + 1) * cols;
                            for (acc, v) in gt[range.clone()].iter_mut().zip(&g[range]) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
        }
        Op::Conv3d {
            input,
            kernels: k,
            bias,
            batch,
            c_in,
            c_out,
            dims,
        } => {
            let xin = nodes[*input].value.data();
            let kv = nodes[*k].value.data();
            let mut gi = slot(nodes, grads, *input).map(std::mem::take);
            let mut gk = slot(nodes, grads, *k).map(std::mem::take);
            let mut gb = slot(nodes, grads, *bias).map(std::mem::take);
            kernels::conv3d_backward(
                xin,
                kv,
                g,
                *batch,
                *c_in,
                *c_out,
                *dims,
                gi.as_deref_mut(),
                gk.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (id, v) in [(*input, gi), (*k, gk), (*bias, gb)] {
                if let Some(v) = v {
                    grads[id] = Some(v);
                }
            }
        }
        Op::MaxPool3d { input, argmax } => {
            if let Some(gi) = slot(nodes, grads, *input) {
                for (gv, &src) in g.iter().zip(argmax) {
                    gi[src] += gv;
                }
            }
        }
        Op::LstmCell {
            x,
            h,
            c,
            w_ih,
            w_hh,
            bias,
            cache,
        } => {
            let (xv, hv, cv) = (&nodes[*x].value, &nodes[*h].value, &nodes[*c].value);
            let (batch, d) = (xv.shape()[0], xv.shape()[1]);
            let k = hv.shape()[1];
            let (d_pre, d_c_prev) = kernels::lstm_gate_grads(cache, cv.data(), g, batch, k);
            if let Some(gx) = slot(nodes, grads, *x) {
                gemm_nt(&d_pre, nodes[*w_ih].value.data(), gx, batch, 4 * k, d);
            }
            if let Some(gh) = slot(nodes, grads, *h) {
                gemm_nt(&d_pre, nodes[*w_hh].value.data(), gh, batch, 4 * k, k);
            }
            accumulate(nodes, grads, *c, &d_c_prev);
            if let Some(gw) = slot(nodes, grads, *w_ih) {
                gemm_tn(xv.data(), &d_pre, gw, d, batch, 4 * k);
            }
            if let Some(gw) = slot(nodes, grads, *w_hh) {
                gemm_tn(hv.data(), &d_pre, gw, k, batch, 4 * k);
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                for row in d_pre.chunks(4 * k) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let classes = nodes[*logits].value.cols();
            let scale = g[0] / labels.len() as f64;
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (r, &label) in labels.iter().enumerate() {
                    for j in 0..classes {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        gl[r * classes + j] += scale * (probs[r * classes + j] - onehot);
                    }
                }
            }
        }
    }
}
