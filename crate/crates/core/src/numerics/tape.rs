//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation records its output value and the indices of its inputs.
//! [`Tape::grad`] walks the record backwards once, so the cost of a gradient
//! is linear in the number of recorded operations. Values flagged as
//! parameters (see [`Tape::param`]) receive a gradient slot; everything else
//! is a constant or an intermediate.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Matrix;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Affine { x: usize, w: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Matrix),
    AddConst(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Abs(usize),
    Recip(usize),
    Square(usize),
    RowMax { a: usize, argmax: Vec<usize> },
    RowSum(usize),
    Sum(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    RepeatRows { a: usize, times: usize },
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Single-threaded; build one per gradient pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(usize, usize)>,
}

/// Gradients keyed by parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: BTreeMap<usize, Matrix>,
}

impl Gradients {
    pub fn get(&self, slot: usize) -> Option<&Matrix> {
        self.slots.get(&slot)
    }

    pub fn into_map(self) -> BTreeMap<usize, Matrix> {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.check(v);
        &self.nodes[v.idx].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar value");
        m.get(0, 0)
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "value recorded on a different tape");
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn unary(&mut self, a: Var, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        self.check(a);
        let node = &self.nodes[a.idx];
        let value = node.value.map(f);
        let ng = node.needs_grad;
        self.push(value, op(a.idx), ng)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var {
        self.check(a);
        self.check(b);
        let (va, vb) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Matrix::from_raw(va.rows(), va.cols(), data);
        let ng = self.nodes[a.idx].needs_grad || self.nodes[b.idx].needs_grad;
        self.push(value, op(a.idx, b.idx), ng)
    }

    /// Records a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable parameter bound to gradient slot `slot`.
    pub fn param(&mut self, slot: usize, value: Matrix) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push((slot, v.idx));
        v
    }

    /// `x W^T + b` with `x: B x in`, `w: out x in`, `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.check(x);
        self.check(w);
        self.check(b);
        let (xv, wv, bv) = (
            &self.nodes[x.idx].value,
            &self.nodes[w.idx].value,
            &self.nodes[b.idx].value,
        );
        let (rows, inp) = xv.shape();
        let out = wv.rows();
        assert_eq!(wv.cols(), inp, "affine weight/input mismatch");
        assert_eq!(bv.shape(), (1, out), "affine bias shape mismatch");
        let mut data = vec![0.0; rows * out];
        let ws = wv.as_slice();
        let bias = bv.as_slice();
        for r in 0..rows {
            let xr = xv.row(r);
            let yr = &mut data[r * out..(r + 1) * out];
            for o in 0..out {
                let wr = &ws[o * inp..(o + 1) * inp];
                let mut acc = bias[o];
                for i in 0..inp {
                    acc += xr[i] * wr[i];
                }
                yr[o] = acc;
            }
        }
        let ng = self.nodes[x.idx].needs_grad
            || self.nodes[w.idx].needs_grad
            || self.nodes[b.idx].needs_grad;
        let op = Op::Affine {
            x: x.idx,
            w: w.idx,
            b: b.idx,
        };
        self.push(Matrix::from_raw(rows, out, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.check(a);
        let value = self.nodes[a.idx].value.map(|v| v * k);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::Scale(a.idx, k), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, k: Matrix) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        assert_eq!(av.shape(), k.shape(), "mul_const shape mismatch");
        let data = av
            .as_slice()
            .iter()
            .zip(k.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let value = Matrix::from_raw(av.rows(), av.cols(), data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::MulConst(a.idx, k), ng)
    }

    pub fn add_const(&mut self, a: Var, k: &Matrix) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        assert_eq!(av.shape(), k.shape(), "add_const shape mismatch");
        let data = av
            .as_slice()
            .iter()
            .zip(k.as_slice())
            .map(|(x, y)| x + y)
            .collect();
        let value = Matrix::from_raw(av.rows(), av.cols(), data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::AddConst(a.idx), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log, f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, super::tanh)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs, f64::abs)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip, f64::recip)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square, |v| v * v)
    }

    /// Per-row maximum (`B x c -> B x 1`); the gradient flows to the first
    /// maximal entry of each row.
    pub fn row_max(&mut self, a: Var) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        let mut argmax = Vec::with_capacity(av.rows());
        let mut data = Vec::with_capacity(av.rows());
        for row in av.iter_rows() {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            argmax.push(best);
            data.push(row[best]);
        }
        let value = Matrix::from_raw(av.rows(), 1, data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::RowMax { a: a.idx, argmax }, ng)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        let data = av.iter_rows().map(|r| r.iter().sum()).collect();
        let value = Matrix::from_raw(av.rows(), 1, data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::RowSum(a.idx), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.check(a);
        let s = self.nodes[a.idx].value.as_slice().iter().sum();
        let ng = self.nodes[a.idx].needs_grad;
        self.push(Matrix::from_raw(1, 1, vec![s]), Op::Sum(a.idx), ng)
    }

    /// Stacks a `1 x c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        assert_eq!(av.rows(), 1, "broadcast_rows expects a row vector");
        let mut data = Vec::with_capacity(rows * av.cols());
        for _ in 0..rows {
            data.extend_from_slice(av.as_slice());
        }
        let value = Matrix::from_raw(rows, av.cols(), data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::BroadcastRows(a.idx), ng)
    }

    /// Repeats a `B x 1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        assert_eq!(av.cols(), 1, "broadcast_cols expects a column vector");
        let mut data = Vec::with_capacity(av.rows() * cols);
        for &v in av.as_slice() {
            data.extend(std::iter::repeat_n(v, cols));
        }
        let value = Matrix::from_raw(av.rows(), cols, data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::BroadcastCols(a.idx), ng)
    }

    /// Repeats each row `times` times contiguously (`B x c -> B*times x c`).
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        let mut data = Vec::with_capacity(av.len() * times);
        for row in av.iter_rows() {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let value = Matrix::from_raw(av.rows() * times, av.cols(), data);
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::RepeatRows { a: a.idx, times }, ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        self.check(a);
        let av = &self.nodes[a.idx].value;
        assert_eq!(av.len(), rows * cols, "reshape size mismatch");
        let value = Matrix::from_raw(rows, cols, av.as_slice().to_vec());
        let ng = self.nodes[a.idx].needs_grad;
        self.push(value, Op::Reshape(a.idx), ng)
    }

    /// Row-wise `log(sum(exp(a)))` built from the primitive set.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let cols = self.value(a).cols();
        let m = self.row_max(a);
        let mb = self.broadcast_cols(m, cols);
        let centered = self.sub(a, mb);
        let e = self.exp(centered);
        let s = self.row_sum(e);
        let l = self.log(s);
        self.add(l, m)
    }

    /// Gradient of the scalar `output` with respect to every parameter slot.
    ///
    /// The tape is left untouched, so repeated calls return identical results.
    pub fn grad(&self, output: Var) -> Result<Gradients> {
        if output.tape != self.id || output.idx >= self.nodes.len() {
            return Err(Error::Usage(
                "gradient requested for a value not recorded on this tape".into(),
            ));
        }
        let out = &self.nodes[output.idx].value;
        if out.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "gradient output must be scalar, got {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=output.idx).map(|_| None).collect();
        adj[output.idx] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.idx).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut adj);
            if matches!(node.op, Op::Param) {
                adj[idx] = Some(g);
            }
        }

        let mut slots: BTreeMap<usize, Matrix> = BTreeMap::new();
        for &(slot, idx) in &self.params {
            let shape = self.nodes[idx].value.shape();
            let g = adj
                .get(idx)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
            match slots.get_mut(&slot) {
                Some(acc) => {
                    for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *a += b;
                    }
                }
                None => {
                    slots.insert(slot, g);
                }
            }
        }
        Ok(Gradients { slots })
    }

    fn propagate(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (rows, inp) = xv.shape();
                let out = wv.rows();
                let gs = g.as_slice();
                if self.nodes[*x].needs_grad {
                    let ws = wv.as_slice();
                    accumulate(adj, *x, xv, |dx| {
                        for r in 0..rows {
                            let gr = &gs[r * out..(r + 1) * out];
                            let dxr = &mut dx[r * inp..(r + 1) * inp];
                            for o in 0..out {
                                let go = gr[o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &ws[o * inp..(o + 1) * inp];
                                for i in 0..inp {
                                    dxr[i] += go * wr[i];
                                }
                            }
                        }
                    });
                }
                if self.nodes[*w].needs_grad {
                    let xs = xv.as_slice();
                    accumulate(adj, *w, wv, |dw| {
                        for r in 0..rows {
                            let gr = &gs[r * out..(r + 1) * out];
                            let xr = &xs[r * inp..(r + 1) * inp];
                            for o in 0..out {
                                let go = gr[o];
                                let dwr = &mut dw[o * inp..(o + 1) * inp];
                                for i in 0..inp {
                                    dwr[i] += go * xr[i];
                                }
                            }
                        }
                    });
                }
                if self.nodes[*b].needs_grad {
                    accumulate(adj, *b, val(*b), |db| {
                        for r in 0..rows {
                            for o in 0..out {
                                db[o] += gs[r * out + o];
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.pass(adj, *a, g, |gi, _| gi);
                self.pass(adj, *b, g, |gi, _| gi);
            }
            Op::Sub(a, b) => {
                self.pass(adj, *a, g, |gi, _| gi);
                self.pass(adj, *b, g, |gi, _| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).as_slice(), val(*b).as_slice());
                self.pass(adj, *a, g, |gi, k| gi * bv[k]);
                self.pass(adj, *b, g, |gi, k| gi * av[k]);
            }
            Op::Scale(a, s) => self.pass(adj, *a, g, |gi, _| gi * s),
            Op::MulConst(a, c) => {
                let cs = c.as_slice();
                self.pass(adj, *a, g, |gi, k| gi * cs[k]);
            }
            Op::AddConst(a) | Op::Reshape(a) => self.pass(adj, *a, g, |gi, _| gi),
            Op::Exp(a) => {
                let y = node.value.as_slice();
                self.pass(adj, *a, g, |gi, k| gi * y[k]);
            }
            Op::Log(a) => {
                let x = val(*a).as_slice();
                self.pass(adj, *a, g, |gi, k| gi / x[k]);
            }
            Op::Tanh(a) => {
                let y = node.value.as_slice();
                self.pass(adj, *a, g, |gi, k| gi * (1.0 - y[k] * y[k]));
            }
            Op::Abs(a) => {
                let x = val(*a).as_slice();
                self.pass(adj, *a, g, |gi, k| {
                    if x[k] > 0.0 {
                        gi
                    } else if x[k] < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
            }
            Op::Recip(a) => {
                let y = node.value.as_slice();
                self.pass(adj, *a, g, |gi, k| -gi * y[k] * y[k]);
            }
            Op::Square(a) => {
                let x = val(*a).as_slice();
                self.pass(adj, *a, g, |gi, k| 2.0 * gi * x[k]);
            }
            Op::RowMax { a, argmax } => {
                if self.nodes[*a].needs_grad {
                    let av = val(*a);
                    let cols = av.cols();
                    let gs = g.as_slice();
                    accumulate(adj, *a, av, |da| {
                        for (r, &j) in argmax.iter().enumerate() {
                            da[r * cols + j] += gs[r];
                        }
                    });
                }
            }
            Op::RowSum(a) => {
                if self.nodes[*a].needs_grad {
                    let av = val(*a);
                    let cols = av.cols();
                    let gs = g.as_slice();
                    accumulate(adj, *a, av, |da| {
                        for (k, d) in da.iter_mut().enumerate() {
                            *d += gs[k / cols];
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if self.nodes[*a].needs_grad {
                    let s = g.get(0, 0);
                    accumulate(adj, *a, val(*a), |da| da.iter_mut().for_each(|d| *d += s));
                }
            }
            Op::BroadcastRows(a) => {
                if self.nodes[*a].needs_grad {
                    let av = val(*a);
                    let cols = av.cols();
                    accumulate(adj, *a, av, |da| {
                        for row in g.iter_rows() {
                            for c in 0..cols {
                                da[c] += row[c];
                            }
                        }
                    });
                }
            }
            Op::BroadcastCols(a) => {
                if self.nodes[*a].needs_grad {
                    accumulate(adj, *a, val(*a), |da| {
                        for (r, row) in g.iter_rows().enumerate() {
                            da[r] += row.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::RepeatRows { a, times } => {
                if self.nodes[*a].needs_grad {
                    let av = val(*a);
                    let cols = av.cols();
                    let gs = g.as_slice();
                    accumulate(adj, *a, av, |da| {
                        for r in 0..av.rows() {
                            let dr = &mut da[r * cols..(r + 1) * cols];
                            for k in 0..*times {
                                let src = &gs[(r * times + k) * cols..(r * times + k + 1) * cols];
                                for c in 0..cols {
                                    dr[c] += src[c];
                                }
                            }
                        }
                    });
                }
            }
        }
    }

    /// Elementwise adjoint: `adj[a][k] += f(g[k], k)`, where `g` has `a`'s shape.
    fn pass(&self, adj: &mut [Option<Matrix>], a: usize, g: &Matrix, f: impl Fn(f64, usize) -> f64) {
        if !self.nodes[a].needs_grad {
            return;
        }
        let gs = g.as_slice();
        let shape = self.nodes[a].value.shape();
        match &mut adj[a] {
            Some(acc) => {
                for (k, d) in acc.as_mut_slice().iter_mut().enumerate() {
                    *d += f(gs[k], k);
                }
            }
            slot @ None => {
                let data = gs.iter().enumerate().map(|(k, &gi)| f(gi, k)).collect();
                *slot = Some(Matrix::from_raw(shape.0, shape.1, data));
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], idx: usize, like: &Matrix, f: impl FnOnce(&mut [f64])) {
    let slot = &mut adj[idx];
    if slot.is_none() {
        *slot = Some(Matrix::zeros(like.rows(), like.cols()));
    }
    f(slot.as_mut().unwrap().as_mut_slice());
}
