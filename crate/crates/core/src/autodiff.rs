//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass in execution order,
//! which is also a topological order, so [`Tape::backward`] is a single
//! reverse sweep. Nodes that do not depend on a gradient-requiring leaf are
//! skipped during the sweep.

use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const NO_SOURCE: usize = usize::MAX;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Scale(Var, T),
    Sin(Var),
    Cos(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix<T>, inv_std: Vec<T> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMax { x: Var, argmax: Vec<usize> },
    Im2Col3x3 { x: Var, height: usize, width: usize },
    MaskRows { x: Var, fill: Var, mask: Vec<bool> },
    L1 { x: Var, target: Matrix<T>, scale: T },
    CrossEntropy { logits: Var, probs: Matrix<T>, targets: Vec<usize>, weights: Vec<T> },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Matrix<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul {:?} x {:?}", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        gemm_into(va, false, vb, false, T::zero(), &mut out);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.cols(), "matmul_bt {:?} x {:?}ᵀ", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        gemm_into(va, false, vb, true, T::zero(), &mut out);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add");
        let mut out = va.clone();
        out.add_assign(vb);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rows(), 1, "add_row bias must be a row");
        assert_eq!(va.cols(), vb.cols(), "add_row width");
        let mut out = va.clone();
        let bias = vb.row(0);
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(out, Op::AddRow(a, b), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.ng(&[a]);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.sin());
        let ng = self.ng(&[a]);
        self.push(out, Op::Sin(a), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.cos());
        let ng = self.ng(&[a]);
        self.push(out, Op::Cos(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(&[a]);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise layer normalization with learned `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        assert_eq!(g.len(), cols, "layer_norm gain width");
        let n = T::lit(cols as f64);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::lit(LN_EPS)).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols(), "slice_cols out of range");
        let out = Matrix::from_fn(va.rows(), len, |r, c| va.get(r, start + c));
        let ng = self.ng(&[a]);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows, "concat_cols row count");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + vp.cols()].copy_from_slice(vp.row(r));
            }
            offset += vp.cols();
        }
        let ng = self.ng(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(indices.len(), va.cols());
        for (i, &src) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(va.row(src));
        }
        let ng = self.ng(&[a]);
        self.push(out, Op::GatherRows(a, indices.to_vec()), ng)
    }

    /// Column-wise max over groups of rows. Row `p` of `x` belongs to group
    /// `segments[p]`; groups without rows produce zeros.
    pub fn segment_max(&mut self, x: Var, segments: &[usize], groups: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.rows(), segments.len(), "segment_max ids");
        let cols = vx.cols();
        let mut out = Matrix::zeros(groups, cols);
        let mut argmax = vec![NO_SOURCE; groups * cols];
        for (p, &s) in segments.iter().enumerate() {
            let row = vx.row(p);
            for (c, &v) in row.iter().enumerate() {
                let slot = s * cols + c;
                if argmax[slot] == NO_SOURCE || v > out.get(s, c) {
                    out.set(s, c, v);
                    argmax[slot] = p;
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::SegmentMax { x, argmax }, ng)
    }

    /// Unfolds a row-major `height x width` grid of `d`-dim cells into
    /// `[height*width, 9d]` zero-padded 3x3 neighborhoods. Neighborhood block
    /// `(di + 1) * 3 + (dj + 1)` holds the cell at offset `(di, dj)`.
    pub fn im2col3x3(&mut self, x: Var, height: usize, width: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.rows(), height * width, "im2col grid size");
        let d = vx.cols();
        let mut out = Matrix::zeros(height * width, 9 * d);
        for i in 0..height {
            for j in 0..width {
                let dst = out.row_mut(i * width + j);
                for (block, (di, dj)) in neighborhood().enumerate() {
                    if let Some(src) = offset_cell(i, j, di, dj, height, width) {
                        dst[block * d..(block + 1) * d].copy_from_slice(vx.row(src));
                    }
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::Im2Col3x3 { x, height, width }, ng)
    }

    /// Keeps rows of `x` where `mask` is set and replaces the others by the
    /// `1 x n` row `fill`.
    pub fn mask_rows(&mut self, x: Var, fill: Var, mask: &[bool]) -> Var {
        let vx = self.value(x);
        let vf = self.value(fill);
        assert_eq!(vx.rows(), mask.len(), "mask_rows mask length");
        assert_eq!(vf.shape(), (1, vx.cols()), "mask_rows fill shape");
        let mut out = vx.clone();
        for (r, &keep) in mask.iter().enumerate() {
            if !keep {
                out.row_mut(r).copy_from_slice(vf.row(0));
            }
        }
        let ng = self.ng(&[x, fill]);
        self.push(out, Op::MaskRows { x, fill, mask: mask.to_vec() }, ng)
    }

    /// `scale * Σ |x - target|` as a `1 x 1` node.
    pub fn l1(&mut self, x: Var, target: Matrix<T>, scale: T) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.shape(), target.shape(), "l1 target shape");
        let total: T = vx.as_slice().iter().zip(target.as_slice()).map(|(&a, &b)| (a - b).abs()).sum();
        let ng = self.ng(&[x]);
        self.push(Matrix::filled(1, 1, total * scale), Op::L1 { x, target, scale }, ng)
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[t_i])` as a `1 x 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows(), targets.len(), "cross_entropy targets");
        assert_eq!(vl.rows(), weights.len(), "cross_entropy weights");
        let mut probs = vl.clone();
        let mut total = T::zero();
        for r in 0..probs.rows() {
            let row = vl.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += weights[r] * (lse - row[targets[r]]);
            softmax_in_place(probs.row_mut(r));
        }
        let ng = self.ng(&[logits]);
        let op = Op::CrossEntropy { logits, probs, targets: targets.to_vec(), weights: weights.to_vec() };
        self.push(Matrix::filled(1, 1, total), op, ng)
    }

    /// Sum of `1 x 1` nodes.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter().copied();
        let first = match iter.next() {
            Some(v) => v,
            None => return self.constant(Matrix::zeros(1, 1)),
        };
        iter.fold(first, |acc, t| self.add(acc, t))
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // dA = G Bᵀ, dB = Aᵀ G
                if let Some(buf) = self.buf(grads, *a) {
                    gemm_into(g, false, self.value(*b), true, T::one(), buf);
                }
                if let Some(buf) = self.buf(grads, *b) {
                    gemm_into(self.value(*a), true, g, false, T::one(), buf);
                }
            }
            Op::MatMulBt(a, b) => {
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                if let Some(buf) = self.buf(grads, *a) {
                    gemm_into(g, false, self.value(*b), false, T::one(), buf);
                }
                if let Some(buf) = self.buf(grads, *b) {
                    gemm_into(g, true, self.value(*a), false, T::one(), buf);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(buf) = self.buf(grads, v) {
                        buf.add_assign(g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(buf) = self.buf(grads, *a) {
                    buf.add_assign(g);
                }
                if let Some(buf) = self.buf(grads, *b) {
                    let acc = buf.row_mut(0);
                    for r in 0..g.rows() {
                        for (o, &gv) in acc.iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(buf) = self.buf(grads, *a) {
                    let out = &node.value;
                    for ((o, &gv), &y) in buf.as_mut_slice().iter_mut().zip(g.as_slice()).zip(out.as_slice()) {
                        if y > T::zero() {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(buf) = self.buf(grads, *a) {
                    for (o, &gv) in buf.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += gv * *s;
                    }
                }
            }
            Op::Sin(a) => {
                let x = self.value(*a).clone();
                if let Some(buf) = self.buf(grads, *a) {
                    for ((o, &gv), &xv) in buf.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                        *o += gv * xv.cos();
                    }
                }
            }
            Op::Cos(a) => {
                let x = self.value(*a).clone();
                if let Some(buf) = self.buf(grads, *a) {
                    for ((o, &gv), &xv) in buf.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                        *o -= gv * xv.sin();
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(buf) = self.buf(grads, *a) {
                    let y = &node.value;
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in buf.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += p * (q - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = self.value(*gamma).row(0).to_vec();
                if let Some(buf) = self.buf(grads, *gamma) {
                    let acc = buf.row_mut(0);
                    for r in 0..g.rows() {
                        for ((o, &gv), &h) in acc.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gv * h;
                        }
                    }
                }
                if let Some(buf) = self.buf(grads, *beta) {
                    let acc = buf.row_mut(0);
                    for r in 0..g.rows() {
                        for (o, &gv) in acc.iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
                if let Some(buf) = self.buf(grads, *x) {
                    let n = T::lit(g.cols() as f64);
                    for (r, &is) in inv_std.iter().enumerate() {
                        let dxhat: Vec<T> = g.row(r).iter().zip(&gam).map(|(&gv, &gm)| gv * gm).collect();
                        let sum_d: T = dxhat.iter().copied().sum();
                        let sum_dx: T = dxhat.iter().zip(xhat.row(r)).map(|(&d, &h)| d * h).sum();
                        let scale = is / n;
                        for (c, o) in buf.row_mut(r).iter_mut().enumerate() {
                            *o += scale * (n * dxhat[c] - sum_d - xhat.get(r, c) * sum_dx);
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(buf) = self.buf(grads, *a) {
                    for r in 0..g.rows() {
                        for (o, &gv) in buf.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if let Some(buf) = self.buf(grads, p) {
                        for r in 0..g.rows() {
                            for (o, &gv) in buf.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + width]) {
                                *o += gv;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::GatherRows(a, indices) => {
                if let Some(buf) = self.buf(grads, *a) {
                    for (i, &src) in indices.iter().enumerate() {
                        for (o, &gv) in buf.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::SegmentMax { x, argmax } => {
                if let Some(buf) = self.buf(grads, *x) {
                    let cols = g.cols();
                    for (slot, &src) in argmax.iter().enumerate() {
                        if src != NO_SOURCE {
                            let c = slot % cols;
                            let v = buf.get(src, c) + g.as_slice()[slot];
                            buf.set(src, c, v);
                        }
                    }
                }
            }
            Op::Im2Col3x3 { x, height, width } => {
                if let Some(buf) = self.buf(grads, *x) {
                    let d = buf.cols();
                    for i in 0..*height {
                        for j in 0..*width {
                            let src_row = g.row(i * width + j);
                            for (block, (di, dj)) in neighborhood().enumerate() {
                                if let Some(cell) = offset_cell(i, j, di, dj, *height, *width) {
                                    for (o, &gv) in
                                        buf.row_mut(cell).iter_mut().zip(&src_row[block * d..(block + 1) * d])
                                    {
                                        *o += gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaskRows { x, fill, mask } => {
                if let Some(buf) = self.buf(grads, *x) {
                    for (r, &keep) in mask.iter().enumerate() {
                        if keep {
                            for (o, &gv) in buf.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                    }
                }
                if let Some(buf) = self.buf(grads, *fill) {
                    for (r, &keep) in mask.iter().enumerate() {
                        if !keep {
                            for (o, &gv) in buf.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                    }
                }
            }
            Op::L1 { x, target, scale } => {
                let s = g.get(0, 0) * *scale;
                let vx = self.value(*x).clone();
                if let Some(buf) = self.buf(grads, *x) {
                    for ((o, &a), &b) in buf.as_mut_slice().iter_mut().zip(vx.as_slice()).zip(target.as_slice()) {
                        let diff = a - b;
                        if diff > T::zero() {
                            *o += s;
                        } else if diff < T::zero() {
                            *o -= s;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, probs, targets, weights } => {
                let s = g.get(0, 0);
                if let Some(buf) = self.buf(grads, *logits) {
                    for r in 0..probs.rows() {
                        let w = weights[r] * s;
                        for (c, o) in buf.row_mut(r).iter_mut().enumerate() {
                            let onehot = if c == targets[r] { T::one() } else { T::zero() };
                            *o += w * (probs.get(r, c) - onehot);
                        }
                    }
                }
            }
        }
    }

    /// Gradient accumulator of `v`, allocated on first use; `None` when `v`
    /// does not need a gradient.
    fn buf<'g>(&self, grads: &'g mut [Option<Matrix<T>>], v: Var) -> Option<&'g mut Matrix<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let (r, c) = node.value.shape();
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }
}

/// Result of [`Tape::backward`]: one gradient per leaf that received one.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn neighborhood() -> impl Iterator<Item = (isize, isize)> {
    (-1..=1).flat_map(|di| (-1..=1).map(move |dj| (di, dj)))
}

#[inline]
fn offset_cell(i: usize, j: usize, di: isize, dj: isize, height: usize, width: usize) -> Option<usize> {
    let ni = i as isize + di;
    let nj = j as isize + dj;
    if ni < 0 || nj < 0 || ni >= height as isize || nj >= width as isize {
        None
    } else {
        Some(ni as usize * width + nj as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Checks the analytic gradient of every input against central
    /// differences of `build`, which maps input nodes to a scalar root.
    fn check(inputs: Vec<Matrix<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone(), true)).collect();
        let root = build(&mut tape, &vars);
        let grads = tape.backward(root);
        let eval = |ins: &[Matrix<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|m| t.leaf(m.clone(), true)).collect();
            let r = build(&mut t, &vs);
            t.scalar(r)
        };
        let eps = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            for idx in 0..m.len() {
                let mut plus = inputs.clone();
                plus[k].as_mut_slice()[idx] += eps;
                let mut minus = inputs.clone();
                minus[k].as_mut_slice()[idx] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let an = analytic.as_slice()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "input {k} elem {idx}: fd {fd} analytic {an}");
            }
        }
    }

    /// Weighted sum with fixed random weights turns any node into a scalar.
    fn project(t: &mut Tape<f64>, v: Var, seed: u64) -> Var {
        let (r, c) = t.shape(v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(c, 1, &mut rng);
        let wv = t.constant(w);
        let col = t.matmul(v, wv);
        let ones = t.constant(Matrix::filled(1, r, 1.0));
        t.matmul(ones, col)
    }

    #[test]
    fn dense_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ins = vec![random(3, 4, &mut rng), random(4, 5, &mut rng), random(1, 5, &mut rng), random(3, 5, &mut rng)];
        check(ins, |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let biased = t.add_row(ab, v[2]);
            let s = t.add(biased, v[3]);
            let r = t.relu(s);
            let sc = t.scale(r, 1.7);
            let bt = t.matmul_bt(sc, v[3]);
            let sm = t.softmax_rows(bt);
            let sn = t.sin(sm);
            let cs = t.cos(v[3]);
            let cat = t.concat_cols(&[sn, cs]);
            let sl = t.slice_cols(cat, 1, 5);
            project(t, sl, 9)
        });
    }

    #[test]
    fn layer_norm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ins = vec![random(4, 6, &mut rng), random(1, 6, &mut rng), random(1, 6, &mut rng)];
        check(ins, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]);
            project(t, y, 3)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ins = vec![random(7, 3, &mut rng), random(1, 3, &mut rng)];
        check(ins, |t, v| {
            let pooled = t.segment_max(v[0], &[0, 2, 2, 3, 0, 3, 3], 6);
            let masked = t.mask_rows(pooled, v[1], &[true, false, true, true, false, false]);
            let cols = t.im2col3x3(masked, 2, 3);
            let g = t.gather_rows(cols, &[5, 0, 5]);
            project(t, g, 4)
        });
    }

    #[test]
    fn losses_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = random(3, 4, &mut rng);
        let ins = vec![random(3, 4, &mut rng)];
        check(ins, move |t, v| {
            let l1 = t.l1(v[0], target.clone(), 0.5);
            let ce = t.cross_entropy(v[0], &[1, 3, 0], &[0.2, 1.0, 0.7]);
            t.sum_scalars(&[l1, ce])
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::filled(2, 2, 1.0));
        let b = t.leaf(Matrix::filled(2, 2, 2.0), true);
        let c = t.matmul(a, b);
        let root = t.l1(c, Matrix::zeros(2, 2), 1.0);
        let g = t.backward(root);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &Matrix::filled(2, 2, 2.0));
    }

    #[test]
    fn im2col_zero_pads_borders() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::from_fn(4, 1, |r, _| r as f64 + 1.0));
        let cols = t.im2col3x3(x, 2, 2);
        let v = t.value(cols);
        // cell (0,0): neighbors (0,1)=2 at block 5, (1,0)=3 at block 7, (1,1)=4 at block 8
        assert_eq!(v.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }
}
