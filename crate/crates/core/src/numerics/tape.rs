//! Reverse-mode differentiation tape.
//!
//! Each primitive records its inputs and, when needed, reads their forward
//! values again during the backward sweep. Nodes are appended in evaluation
//! order, so a reverse scan is a valid topological order.

use std::rc::Rc;

use super::tensor::{dot, linear_rows, Tensor};
use super::{Gradients, NumericsError, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    /// Mean over the rows in a segment; an empty segment reduces to zero.
    Mean,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    ScaleRows(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        index: Rc<[usize]>,
    },
    SegmentReduce {
        x: Var,
        segments: Rc<[usize]>,
        counts: Option<Vec<usize>>,
    },
    Reshape(Var),
    LogSumExp(Var),
    Pick {
        x: Var,
        index: usize,
    },
    Sum(Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
    relu_margin: f64,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            consumed: false,
            relu_margin: f64::INFINITY,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest nonzero |pre-activation| seen by any ReLU on this tape.
    ///
    /// Exact zeros are structural (rows with no incoming signal) and are
    /// excluded; finite-difference checks use this to stay away from kinks.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    /// Which ReLU inputs were strictly positive, over every ReLU on the tape
    /// in recording order. Two evaluations with equal patterns lie on the
    /// same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|&x| x > 0.0))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.tensor(*id),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// `y = x Wᵀ (+ b)` applied to every row of `x`.
    ///
    /// `w` is viewed as an `m × k` matrix (leading dimensions folded), so a
    /// `[r, d, d]` stack of relation matrices maps a `d`-vector to `r·d`
    /// outputs in one call. The bias, when present, must hold `m` elements.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let (xt, wt) = (self.value(x), self.value(w));
        if xt.cols() != wt.cols() {
            return Err(mismatch("linear", xt, wt));
        }
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != wt.rows() {
                return Err(mismatch("linear bias", wt, bt));
            }
        }
        let out = linear_rows(xt, wt, b.map(|b| self.value(b)));
        let shape = vec![xt.rows(), wt.rows()];
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch(op_name, at, bt));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        op_name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (at, rt) = (self.value(a), self.value(row));
        if rt.len() != at.cols() {
            return Err(mismatch(op_name, at, rt));
        }
        let c = at.cols();
        let data = at
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, rt.data()[i % c]))
            .collect();
        let t = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    /// Adds the vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` pointwise by the vector `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    /// Multiplies row `i` of `a` by the scalar `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (at, st) = (self.value(a), self.value(s));
        if st.len() != at.rows() {
            return Err(mismatch("scale_rows", at, st));
        }
        let c = at.cols();
        let data = at
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * st.data()[i / c])
            .collect();
        let t = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(t, Op::ScaleRows(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let mut margin = self.relu_margin;
        let data = at
            .data()
            .iter()
            .map(|&x| {
                if x != 0.0 {
                    margin = margin.min(x.abs());
                }
                x.max(0.0)
            })
            .collect();
        let t = Tensor::new(at.shape().to_vec(), data).expect("same shape");
        self.relu_margin = margin;
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let data = at.data().iter().map(|&x| sigmoid(x)).collect();
        let t = Tensor::new(at.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Sigmoid(a))
    }

    /// Column-wise concatenation `[a | b]` of two tensors with equal rows.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rows() != bt.rows() {
            return Err(mismatch("concat", at, bt));
        }
        let (n, ca, cb) = (at.rows(), at.cols(), bt.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(at.row(i));
            data.extend_from_slice(bt.row(i));
        }
        let t = Tensor::new(vec![n, ca + cb], data)?;
        Ok(self.push(t, Op::Concat(a, b)))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if start > end || end > xt.cols() {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                len: xt.cols(),
            });
        }
        let n = xt.rows();
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&xt.row(i)[start..end]);
        }
        let t = Tensor::new(vec![n, end - start], data)?;
        Ok(self.push(t, Op::SliceCols { x, start }))
    }

    /// Selects rows of `x` by index (repeats allowed).
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (n, c) = (xt.rows(), xt.cols());
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= n {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    len: n,
                });
            }
            data.extend_from_slice(xt.row(i));
        }
        let t = Tensor::new(vec![index.len(), c], data)?;
        Ok(self.push(t, Op::Gather { x, index }))
    }

    /// Groups the rows of `x` by `segments[i]` and reduces each group.
    ///
    /// Accumulation follows row order, so results are bitwise reproducible
    /// for a fixed input order.
    pub fn segment_reduce(
        &mut self,
        x: Var,
        segments: Rc<[usize]>,
        num_segments: usize,
        mode: ReduceMode,
    ) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if segments.len() != xt.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_reduce",
                left: xt.shape().to_vec(),
                right: vec![segments.len()],
            });
        }
        let c = xt.cols();
        let mut out = vec![0.0; num_segments * c];
        let mut counts = vec![0usize; num_segments];
        for (i, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(NumericsError::IndexOutOfRange {
                    op: "segment_reduce",
                    index: s,
                    len: num_segments,
                });
            }
            counts[s] += 1;
            for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(xt.row(i)) {
                *o += v;
            }
        }
        let counts = match mode {
            ReduceMode::Sum => None,
            ReduceMode::Mean => {
                for (s, &n) in counts.iter().enumerate() {
                    if n > 1 {
                        let inv = 1.0 / n as f64;
                        out[s * c..(s + 1) * c].iter_mut().for_each(|v| *v *= inv);
                    }
                }
                Some(counts)
            }
        };
        let t = Tensor::new(vec![num_segments, c], out)?;
        Ok(self.push(
            t,
            Op::SegmentReduce {
                x,
                segments,
                counts,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// `log Σ exp(x)` over all elements, stabilised by the maximum.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if xt.is_empty() {
            return Err(NumericsError::EmptyInput { op: "logsumexp" });
        }
        let t = Tensor::scalar(logsumexp(xt.data()));
        Ok(self.push(t, Op::LogSumExp(x)))
    }

    /// The element at flat position `index`, as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let v = *xt.data().get(index).ok_or(NumericsError::IndexOutOfRange {
            op: "pick",
            index,
            len: xt.len(),
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, index }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse sweep from a scalar `loss`, returning parameter gradients.
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NumericsError::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads = Gradients::zeros_for(self.store);
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        grads.accumulate_raw(id, self.store.tensor(id).shape(), g);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xt, wt) = (self.value(*x), self.value(*w));
                    let (n, k, m) = (xt.rows(), xt.cols(), wt.rows());
                    let mut dx = vec![0.0; n * k];
                    let mut dw = vec![0.0; m * k];
                    let mut db = vec![0.0; m];
                    for r in 0..n {
                        let gr = &g[r * m..(r + 1) * m];
                        if gr.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let xr = xt.row(r);
                        let x_zero = xr.iter().all(|&v| v == 0.0);
                        let dxr = &mut dx[r * k..(r + 1) * k];
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj == 0.0 {
                                continue;
                            }
                            db[j] += gj;
                            let wj = &wt.data()[j * k..(j + 1) * k];
                            for (d, wv) in dxr.iter_mut().zip(wj) {
                                *d += gj * wv;
                            }
                            if !x_zero {
                                for (d, xv) in dw[j * k..(j + 1) * k].iter_mut().zip(xr) {
                                    *d += gj * xv;
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, neg);
                }
                Op::AddRow(a, row) => {
                    let c = self.value(*a).cols();
                    let mut dr = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        dr[i % c] += v;
                    }
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *row, dr);
                }
                Op::Mul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let da = g.iter().zip(bt.data()).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(at.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MulRow(a, row) => {
                    let (at, rt) = (self.value(*a), self.value(*row));
                    let c = at.cols();
                    let mut dr = vec![0.0; c];
                    let mut da = vec![0.0; g.len()];
                    for (i, gv) in g.iter().enumerate() {
                        da[i] = gv * rt.data()[i % c];
                        dr[i % c] += gv * at.data()[i];
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *row, dr);
                }
                Op::ScaleRows(a, s) => {
                    let (at, st) = (self.value(*a), self.value(*s));
                    let c = at.cols();
                    let mut ds = vec![0.0; st.len()];
                    let mut da = vec![0.0; g.len()];
                    for r in 0..at.rows() {
                        let gr = &g[r * c..(r + 1) * c];
                        ds[r] = dot(gr, at.row(r));
                        let sr = st.data()[r];
                        for (d, gv) in da[r * c..(r + 1) * c].iter_mut().zip(gr) {
                            *d = gv * sr;
                        }
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *s, ds);
                }
                Op::Relu(a) => {
                    let at = self.value(*a);
                    let da = g
                        .iter()
                        .zip(at.data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, da);
                }
                Op::Sigmoid(a) => {
                    let yt = self.value(Var(i));
                    let da = g
                        .iter()
                        .zip(yt.data())
                        .map(|(g, &y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut adj, *a, da);
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let n = self.value(*a).rows();
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for r in 0..n {
                        let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::SliceCols { x, start } => {
                    let xt = self.value(*x);
                    let (n, c) = (xt.rows(), xt.cols());
                    let w = g.len() / n.max(1);
                    let mut dx = vec![0.0; n * c];
                    for r in 0..n {
                        dx[r * c + start..r * c + start + w]
                            .copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Gather { x, index } => {
                    let xt = self.value(*x);
                    let c = xt.cols();
                    let mut dx = vec![0.0; xt.len()];
                    for (r, &src) in index.iter().enumerate() {
                        for (d, gv) in dx[src * c..(src + 1) * c]
                            .iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                        {
                            *d += gv;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::SegmentReduce {
                    x,
                    segments,
                    counts,
                } => {
                    let xt = self.value(*x);
                    let c = xt.cols();
                    let mut dx = vec![0.0; xt.len()];
                    for (r, &s) in segments.iter().enumerate() {
                        let scale = match counts {
                            Some(counts) => 1.0 / counts[s] as f64,
                            None => 1.0,
                        };
                        for (d, gv) in dx[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[s * c..(s + 1) * c])
                        {
                            *d = gv * scale;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Reshape(x) => accumulate(&mut adj, *x, g),
                Op::LogSumExp(x) => {
                    let xt = self.value(*x);
                    let lse = self.value(Var(i)).data()[0];
                    let dx = xt.data().iter().map(|v| g[0] * (v - lse).exp()).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    dx[*index] = g[0];
                    accumulate(&mut adj, *x, dx);
                }
                Op::Sum(x) => {
                    let dx = vec![g[0]; self.value(*x).len()];
                    accumulate(&mut adj, *x, dx);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable `log Σ exp(x)`. Panics on empty input.
pub(crate) fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn identity_and_zero_linear() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let eye =
            t.constant(Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let zero_b = t.constant(Tensor::zeros(&[3]));
        let y = t.linear(x, eye, Some(zero_b)).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, -2.0, 3.0]);

        let zw = t.constant(Tensor::zeros(&[3, 3]));
        let b = t.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let y = t.linear(x, zw, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn linear_matches_triple_loop_oracle() {
        let w = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4, -0.9, 0.5, 1.1];
        let x = [0.25, -0.75, 1.5];
        let b = [0.1, -0.2, 0.3];
        let mut expected = [0.0; 3];
        for i in 0..3 {
            expected[i] = b[i];
            for k in 0..3 {
                expected[i] += w[i * 3 + k] * x[k];
            }
        }
        let s = store();
        let mut t = Tape::new(&s);
        let xv = t.constant(Tensor::vector(x.to_vec()));
        let wv = t.constant(Tensor::matrix(3, 3, w.to_vec()).unwrap());
        let bv = t.constant(Tensor::vector(b.to_vec()));
        let y = t.linear(xv, wv, Some(bv)).unwrap();
        for (a, e) in t.value(y).data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let s = store();
        let mut t = Tape::new(&s);
        let a = t.constant(Tensor::zeros(&[2]));
        let b = t.constant(Tensor::zeros(&[3]));
        assert!(matches!(
            t.add(a, b),
            Err(NumericsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            t.mul(a, b),
            Err(NumericsError::ShapeMismatch { .. })
        ));
        let w = t.constant(Tensor::zeros(&[2, 3]));
        assert!(t.linear(a, w, None).is_err());
        let e = t.constant(Tensor::zeros(&[0]));
        assert!(matches!(
            t.logsumexp(e),
            Err(NumericsError::EmptyInput { .. })
        ));
    }

    #[test]
    fn activations() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let sg = t.sigmoid(x);
        assert_eq!(t.value(sg).data()[1], 0.5);
        let ones = t.constant(Tensor::filled(&[3], 1.0));
        let h = t.mul(x, ones).unwrap();
        assert_eq!(t.value(h).data(), t.value(x).data());
        let c = t.concat(x, ones).unwrap();
        assert_eq!(t.value(c).shape(), &[1, 6]);
    }

    #[test]
    fn segment_reduce_cases() {
        let s = store();
        let mut t = Tape::new(&s);
        let m = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t
            .segment_reduce(m, Rc::from(vec![1, 0]), 2, ReduceMode::Sum)
            .unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0, 1.0, 2.0]);

        let same = t.constant(Tensor::matrix(2, 2, vec![1.5, -2.0, 1.5, -2.0]).unwrap());
        let y = t
            .segment_reduce(same, Rc::from(vec![0, 0]), 2, ReduceMode::Mean)
            .unwrap();
        assert_eq!(t.value(y).data(), &[1.5, -2.0, 0.0, 0.0]);

        // Per-row accumulation oracle on three messages over two segments.
        let rows = [[0.5, 1.0], [-2.0, 3.0], [4.0, -1.5]];
        let seg = [1usize, 0, 1];
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0.0; 2];
        for (r, &sgm) in rows.iter().zip(&seg) {
            counts[sgm] += 1.0;
            for c in 0..2 {
                sums[sgm][c] += r[c];
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = t.constant(Tensor::matrix(3, 2, flat).unwrap());
        let ys = t
            .segment_reduce(x, Rc::from(seg.to_vec()), 2, ReduceMode::Sum)
            .unwrap();
        let ym = t
            .segment_reduce(x, Rc::from(seg.to_vec()), 2, ReduceMode::Mean)
            .unwrap();
        for (s_, (sum, count)) in sums.iter().zip(counts).enumerate() {
            for (c, &v) in sum.iter().enumerate() {
                assert_eq!(t.value(ys).row(s_)[c], v);
                assert!((t.value(ym).row(s_)[c] - v / count).abs() < 1e-15);
            }
        }
        let bad = t.segment_reduce(x, Rc::from(vec![0, 5, 1]), 2, ReduceMode::Sum);
        assert!(matches!(bad, Err(NumericsError::IndexOutOfRange { .. })));
    }

    #[test]
    fn logsumexp_values() {
        assert!((logsumexp(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(logsumexp(&[3.25]), 3.25);
        let big = logsumexp(&[1000.0, 1000.0]);
        assert!((big - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn backward_errors_and_trivial_cases() {
        let mut s = store();
        let w = s.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut t = Tape::new(&s);
        let wv = t.param(w);
        assert!(matches!(
            t.backward(wv),
            Err(NumericsError::NonScalarLoss(_))
        ));

        let c = t.constant(Tensor::scalar(3.0));
        let g = t.backward(c).unwrap();
        assert!(g.get(w).is_none());
        assert!(matches!(t.backward(c), Err(NumericsError::TapeConsumed)));

        // loss = <w, x>  =>  dloss/dw = x
        let mut t = Tape::new(&s);
        let wv = t.param(w);
        let x = t.constant(Tensor::vector(vec![-0.5, 7.0]));
        let prod = t.mul(wv, x).unwrap();
        let loss = t.sum(prod);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[-0.5, 7.0]);
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let mut s = store();
        let w = s.add("w", Tensor::vector(vec![0.3, -1.0, 2.0])).unwrap();
        let mut t = Tape::new(&s);
        let wv = t.param(w);
        let l = t.logsumexp(wv).unwrap();
        let g = t.backward(l).unwrap();
        let z: f64 = [0.3f64, -1.0, 2.0].iter().map(|v| v.exp()).sum();
        for (gv, x) in g.get(w).unwrap().data().iter().zip([0.3f64, -1.0, 2.0]) {
            assert!((gv - x.exp() / z).abs() < 1e-14);
        }
    }
}
