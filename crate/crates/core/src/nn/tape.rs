//! Recorded computations and their reverse pass.

use thiserror::Error;

use super::{Grads, ParamId, ParamStore, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row index meaning "a zero row" in [`Tape::gather_rows`].
pub const ZERO_ROW: usize = usize::MAX;

enum Value<S> {
    Owned(Tensor<S>),
    Param(ParamId),
}

enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Gather { a: Var, idx: Vec<usize> },
    EdgeAgg { h: Var, edges: Vec<(u32, u32, u8)> },
    SegmentMean { a: Var, offsets: Vec<usize> },
    Sum(Var),
    SoftmaxCe { logits: Var, probs: Tensor<S>, targets: Vec<usize> },
}

struct Node<S> {
    value: Value<S>,
    op: Op<S>,
    needs_grad: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TapeError {
    #[error("loss must be 1x1, got {0}x{1}")]
    NonScalarLoss(usize, usize),
}

/// A single-threaded record of tensor operations over a parameter store.
pub struct Tape<'p, S: Scalar> {
    store: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(store: &'p ParamStore<S>) -> Self {
        Tape { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore<S> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, t: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.get(*p),
        }
    }

    pub fn scalar(&self, v: Var) -> S {
        self.value(v).data()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Leaf for a parameter; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let m = if ta { va.cols() } else { va.rows() };
        let n = if tb { vb.rows() } else { vb.cols() };
        let mut c = Tensor::zeros(m, n);
        Tensor::gemm_into(va, ta, vb, tb, &mut c);
        let ng = self.ng(a) || self.ng(b);
        self.push(c, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, true)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shapes differ");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(va.rows(), va.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(r));
        assert_eq!((1, va.cols()), vr.shape(), "row broadcast shape");
        let mut t = va.clone();
        let row = vr.data();
        for i in 0..t.rows() {
            for (x, &y) in t.row_mut(i).iter_mut().zip(row) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(t, Op::AddRow(a, r), ng)
    }

    /// `a * W + b` for parameters `w` and `b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let (w, b) = (self.param(w), self.param(b));
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| S::one() - x);
        let ng = self.ng(a);
        self.push(t, Op::OneMinus(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| S::one() / (S::one() + (-x).exp()));
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut t = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            let w = v.cols();
            for r in 0..rows {
                t.row_mut(r)[off..off + w].copy_from_slice(v.row(r));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(t, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.cols());
        let mut t = Tensor::zeros(v.rows(), len);
        for r in 0..v.rows() {
            t.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(t, Op::SliceCols { a, start }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.rows());
        let c = v.cols();
        let t = Tensor::from_vec(len, c, v.data()[start * c..(start + len) * c].to_vec());
        let ng = self.ng(a);
        self.push(t, Op::SliceRows { a, start }, ng)
    }

    /// Rows of `a` in the order given; [`ZERO_ROW`] yields zeros.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a);
        let c = v.cols();
        let mut t = Tensor::zeros(idx.len(), c);
        for (i, &r) in idx.iter().enumerate() {
            if r != ZERO_ROW {
                t.row_mut(i).copy_from_slice(v.row(r));
            }
        }
        let ng = self.ng(a);
        self.push(t, Op::Gather { a, idx }, ng)
    }

    /// Typed message sum: row `dst` of block `ty` receives row `src` of `h`
    /// for every edge `(src, dst, ty)`. Output is `n x (types * d)`.
    pub fn edge_aggregate(&mut self, h: Var, edges: Vec<(u32, u32, u8)>, types: usize) -> Var {
        let v = self.value(h);
        let (n, d) = v.shape();
        let mut t = Tensor::zeros(n, types * d);
        for &(s, dst, ty) in &edges {
            let src = v.row(s as usize);
            let out = &mut t.row_mut(dst as usize)[ty as usize * d..(ty as usize + 1) * d];
            for (o, &x) in out.iter_mut().zip(src) {
                *o += x;
            }
        }
        let ng = self.ng(h);
        self.push(t, Op::EdgeAgg { h, edges }, ng)
    }

    /// Mean of each contiguous row block `offsets[i]..offsets[i+1]`.
    pub fn segment_mean(&mut self, a: Var, offsets: Vec<usize>) -> Var {
        let v = self.value(a);
        let k = offsets.len() - 1;
        let mut t = Tensor::zeros(k, v.cols());
        for s in 0..k {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi == lo {
                continue;
            }
            let inv = S::one() / S::c((hi - lo) as f64);
            let out = t.row_mut(s);
            for r in lo..hi {
                for (o, &x) in out.iter_mut().zip(v.row(r)) {
                    *o += x;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let ng = self.ng(a);
        self.push(t, Op::SegmentMean { a, offsets }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: S = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Summed cross-entropy of row-wise softmaxes restricted to `mask`
    /// (row-major, same shape as `logits`). Each target must be unmasked.
    pub fn softmax_ce(&mut self, logits: Var, mask: &[bool], targets: Vec<usize>) -> Var {
        let v = self.value(logits);
        let (rows, cols) = v.shape();
        assert_eq!(mask.len(), rows * cols);
        assert_eq!(targets.len(), rows);
        let mut probs = Tensor::zeros(rows, cols);
        let mut loss = S::zero();
        for r in 0..rows {
            let m = &mask[r * cols..(r + 1) * cols];
            let z = v.row(r);
            assert!(m[targets[r]], "target {} of row {r} is masked out", targets[r]);
            let mut mx = S::neg_infinity();
            for c in 0..cols {
                if m[c] && z[c] > mx {
                    mx = z[c];
                }
            }
            let mut total = S::zero();
            let p = probs.row_mut(r);
            for c in 0..cols {
                if m[c] {
                    p[c] = (z[c] - mx).exp();
                    total += p[c];
                }
            }
            for x in p.iter_mut() {
                *x /= total;
            }
            loss += mx + total.ln() - z[targets[r]];
        }
        let ng = self.ng(logits);
        self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, probs, targets }, ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Result<Grads<S>, TapeError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TapeError::NonScalarLoss(r, c));
        }
        let mut grads: Vec<Option<Tensor<S>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        let mut out = Grads::zeros_like(self.store);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop(i, &node.op, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<S>>], v: Var) -> Option<&'g mut Tensor<S>> {
        if !self.ng(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn backprop(&self, i: usize, op: &Op<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>], out: &mut Grads<S>) {
        let y = self.value(Var(i));
        match op {
            Op::Leaf => {}
            Op::Param(p) => out.accumulate(*p, g),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    match (ta, tb) {
                        (false, false) => Tensor::gemm_into(g, false, vb, true, ga),
                        (false, true) => Tensor::gemm_into(g, false, vb, false, ga),
                        (true, false) => Tensor::gemm_into(vb, false, g, true, ga),
                        (true, true) => Tensor::gemm_into(vb, true, g, true, ga),
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    match (ta, tb) {
                        (false, false) => Tensor::gemm_into(va, true, g, false, gb),
                        (false, true) => Tensor::gemm_into(g, true, va, false, gb),
                        (true, false) => Tensor::gemm_into(va, false, g, false, gb),
                        (true, true) => Tensor::gemm_into(g, true, va, true, gb),
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (x, &d) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &d), &o) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x += d * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, &d), &o) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += d * o;
                    }
                }
            }
            Op::AddRow(a, r) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = self.slot(grads, *r) {
                    let row = gr.data_mut();
                    for k in 0..g.rows() {
                        for (x, &d) in row.iter_mut().zip(g.row(k)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (x, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += d * *s;
                    }
                }
            }
            Op::OneMinus(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (x, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x -= d;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &d), &o) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += d * (S::one() - o * o);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &d), &o) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += d * o * (S::one() - o);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..g.rows() {
                            for (x, &d) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *x += d;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = g.cols();
                for &p in parts {
                    let h = self.shape(p).0;
                    if let Some(gp) = self.slot(grads, p) {
                        for (x, &d) in gp.data_mut().iter_mut().zip(&g.data()[off * c..(off + h) * c]) {
                            *x += d;
                        }
                    }
                    off += h;
                }
            }
            Op::SliceCols { a, start } => {
                if let Some(ga) = self.slot(grads, *a) {
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (x, &d) in ga.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::SliceRows { a, start } => {
                if let Some(ga) = self.slot(grads, *a) {
                    let c = g.cols();
                    for (x, &d) in ga.data_mut()[start * c..(start + g.rows()) * c].iter_mut().zip(g.data()) {
                        *x += d;
                    }
                }
            }
            Op::Gather { a, idx } => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, &r) in idx.iter().enumerate() {
                        if r == ZERO_ROW {
                            continue;
                        }
                        for (x, &d) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::EdgeAgg { h, edges } => {
                if let Some(gh) = self.slot(grads, *h) {
                    let d = gh.cols();
                    for &(s, dst, ty) in edges {
                        let src = &g.row(dst as usize)[ty as usize * d..(ty as usize + 1) * d];
                        for (x, &v) in gh.row_mut(s as usize).iter_mut().zip(src) {
                            *x += v;
                        }
                    }
                }
            }
            Op::SegmentMean { a, offsets } => {
                if let Some(ga) = self.slot(grads, *a) {
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        if hi == lo {
                            continue;
                        }
                        let inv = S::one() / S::c((hi - lo) as f64);
                        for r in lo..hi {
                            for (x, &d) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                                *x += d * inv;
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let d = g.data()[0];
                if let Some(ga) = self.slot(grads, *a) {
                    for x in ga.data_mut() {
                        *x += d;
                    }
                }
            }
            Op::SoftmaxCe { logits, probs, targets } => {
                let d = g.data()[0];
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = gl.row_mut(r);
                        for (x, &p) in row.iter_mut().zip(probs.row(r)) {
                            *x += d * p;
                        }
                        row[t] -= d;
                    }
                }
            }
        }
    }
}

/// Softmax of `row` over the columns where `allowed` holds; others get 0.
pub fn masked_softmax<S: Scalar>(row: &[S], allowed: impl Fn(usize) -> bool) -> Vec<S> {
    let mx = row
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &x)| x)
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<S> = row
        .iter()
        .enumerate()
        .map(|(i, &x)| if allowed(i) { (x - mx).exp() } else { S::zero() })
        .collect();
    let total: S = out.iter().copied().sum();
    if total > S::zero() {
        for x in &mut out {
            *x /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero_has_unit_slope() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add("x", Tensor::scalar(0.0));
        let mut t = Tape::new(&store);
        let x = t.param(p);
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0]);
    }

    #[test]
    fn unused_param_gets_no_grad() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0));
        let b = store.add("b", Tensor::scalar(3.0));
        let mut t = Tape::new(&store);
        let x = t.param(a);
        let _unused = t.param(b);
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[4.0]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store: ParamStore<f64> = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::zeros(2, 2));
        assert_eq!(t.backward(x).unwrap_err(), TapeError::NonScalarLoss(2, 2));
    }

    #[test]
    fn softmax_sums_to_one() {
        let row = [1.0, 1000.0, -3.0, 2.5];
        let p = masked_softmax(&row, |i| i != 1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn single_candidate_ce_is_zero() {
        let store: ParamStore<f64> = ParamStore::new();
        let mut t = Tape::new(&store);
        let z = t.constant(Tensor::from_f64(1, 3, &[0.3, -2.0, 5.0]));
        let l = t.softmax_ce(z, &[false, true, false], vec![1]);
        assert_eq!(t.scalar(l), 0.0);
    }
}
