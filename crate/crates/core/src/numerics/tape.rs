//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward computation. [`Tape::backward`] replays the list in reverse and
//! returns the gradient of a scalar loss with respect to every parameter of
//! a [`ParamStore`]. Tapes are cheap to create and are meant to be used for
//! a single example (or a single loss evaluation) and then dropped.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use indexmap::IndexMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Gradient of a loss with respect to each named parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    entries: IndexMap<String, Tensor>,
}

impl Gradients {
    /// All-zero gradients shaped like `store`.
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            entries: store
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    /// `self += scale * other`, matching entries by name.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in &other.entries {
            let slot = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if slot.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient `{name}` shape differs")));
            }
            for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.entries.values_mut().for_each(|t| t.scale(k));
    }

    /// Euclidean norm over all entries.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// Names whose gradient has any non-zero entry.
    pub fn nonzero_names(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, t)| t.data().iter().any(|&v| v != 0.0))
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow { m: usize, r: usize },
    Linear { w: usize, x: usize, b: Option<usize> },
    MatVecT { w: usize, x: usize },
    MatMulNT { a: usize, b: usize },
    Outer(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LogSoftmaxRows(usize),
    Concat(Vec<usize>),
    Slice { a: usize, start: usize },
    Stack(Vec<usize>),
    Row { m: usize, i: usize },
    Max2(usize, usize),
    Sum(usize),
    Dot(usize, usize),
    Pick { a: usize, idx: usize },
    Masked { a: usize, mask: Vec<f64> },
    SmoothedNll { logp: usize, q: Vec<f64> },
    ScalarWithGrad { a: usize, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<usize, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Records a constant (no gradient flows into it from the store).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn vector(&self, data: Vec<f64>) -> Var<'_> {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&self, n: usize) -> Var<'_> {
        self.constant(Tensor::zeros(&[n]))
    }

    /// Binds the named parameter of `store`. Repeated binds return the same node.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if let Some(&id) = self.params.borrow().get(&idx) {
            return Ok(Var { tape: self, id });
        }
        let v = self.push(store.get_index(idx).1.clone(), Op::Param(idx));
        self.params.borrow_mut().insert(idx, v.id);
        Ok(v)
    }

    /// Concatenates 1-D values.
    pub fn concat(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        if parts.is_empty() {
            return Err(Error::Empty("concat of nothing".into()));
        }
        let mut data = Vec::new();
        {
            let nodes = self.nodes.borrow();
            for p in parts {
                let t = &nodes[p.id].value;
                if t.shape().len() != 1 {
                    return Err(shape_err(format!("concat expects vectors, got {:?}", t.shape())));
                }
                data.extend_from_slice(t.data());
            }
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    /// Stacks equal-length vectors into a `k x n` matrix.
    pub fn stack(&self, rows: &[Var<'_>]) -> Result<Var<'_>> {
        if rows.is_empty() {
            return Err(Error::Empty("stack of nothing".into()));
        }
        let (n, data) = {
            let nodes = self.nodes.borrow();
            let n = nodes[rows[0].id].value.len();
            let mut data = Vec::with_capacity(n * rows.len());
            for r in rows {
                let t = &nodes[r.id].value;
                if t.shape() != [n] {
                    return Err(shape_err(format!("stack row shape {:?} != [{n}]", t.shape())));
                }
                data.extend_from_slice(t.data());
            }
            (n, data)
        };
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), n], data),
            Op::Stack(rows.iter().map(|r| r.id).collect()),
        ))
    }

    /// `w x + b` for a `m x n` matrix `w` and vector `x` of length `n`.
    pub fn linear<'t>(&'t self, w: Var<'t>, x: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.nodes.borrow();
            let wt = &nodes[w.id].value;
            let xt = &nodes[x.id].value;
            if wt.shape().len() != 2 || xt.shape() != [wt.shape()[1]] {
                return Err(shape_err(format!("linear {:?} x {:?}", wt.shape(), xt.shape())));
            }
            let (m, n) = (wt.shape()[0], wt.shape()[1]);
            let mut y = match b {
                Some(b) => {
                    let bt = &nodes[b.id].value;
                    if bt.shape() != [m] {
                        return Err(shape_err(format!("bias {:?} for {m} outputs", bt.shape())));
                    }
                    bt.data().to_vec()
                }
                None => vec![0.0; m],
            };
            let wd = wt.data();
            let xd = xt.data();
            for (i, yi) in y.iter_mut().enumerate() {
                let row = &wd[i * n..(i + 1) * n];
                *yi += row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
            }
            y
        };
        Ok(self.push(
            Tensor::vector(out),
            Op::Linear {
                w: w.id,
                x: x.id,
                b: b.map(|b| b.id),
            },
        ))
    }

    /// `a bᵀ` for `a: m x k`, `b: n x k`.
    pub fn matmul_nt<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (shape, out) = {
            let nodes = self.nodes.borrow();
            let at = &nodes[a.id].value;
            let bt = &nodes[b.id].value;
            if at.shape().len() != 2 || bt.shape().len() != 2 || at.shape()[1] != bt.shape()[1] {
                return Err(shape_err(format!("matmul_nt {:?} x {:?}ᵀ", at.shape(), bt.shape())));
            }
            let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let ar = &at.data()[i * k..(i + 1) * k];
                for j in 0..n {
                    let br = &bt.data()[j * k..(j + 1) * k];
                    out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                }
            }
            (vec![m, n], out)
        };
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMulNT { a: a.id, b: b.id }))
    }

    /// Outer product of two vectors.
    pub fn outer<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (shape, out) = {
            let nodes = self.nodes.borrow();
            let at = &nodes[a.id].value;
            let bt = &nodes[b.id].value;
            if at.shape().len() != 1 || bt.shape().len() != 1 {
                return Err(shape_err("outer expects vectors".into()));
            }
            let mut out = Vec::with_capacity(at.len() * bt.len());
            for x in at.data() {
                out.extend(bt.data().iter().map(|y| x * y));
            }
            (vec![at.len(), bt.len()], out)
        };
        Ok(self.push(Tensor::from_parts(shape, out), Op::Outer(a.id, b.id)))
    }

    /// Computes the gradient of the scalar `loss` with respect to every parameter of `store`.
    /// Parameters that did not take part in the computation get zero gradients.
    pub fn backward(&self, loss: Var<'_>, store: &ParamStore) -> Result<Gradients> {
        let mut out = Gradients::zeros_like(store);
        self.backward_into(loss, store, 1.0, &mut out)?;
        Ok(out)
    }

    /// Adds `scale * d loss / d param` into `acc`.
    pub fn backward_into(&self, loss: Var<'_>, store: &ParamStore, scale: f64, acc: &mut Gradients) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::InvalidArgument("loss was not recorded on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id].value;
        if !root.is_scalar() {
            return Err(Error::NonScalarLoss(root.shape().to_vec()));
        }
        if !root.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'g mut Vec<f64> {
            grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()])
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => {
                    let name = store.get_index(*idx).0;
                    let dst = acc
                        .get_mut(name)
                        .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
                    for (d, s) in dst.data_mut().iter_mut().zip(&g) {
                        *d += scale * s;
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, &nodes, *a), &g);
                    add_into(slot(&mut grads, &nodes, *b), &g);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, &nodes, *a), &g);
                    let gb = slot(&mut grads, &nodes, *b);
                    for (d, s) in gb.iter_mut().zip(&g) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(nodes[*b].value.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(nodes[*a].value.data()).map(|(x, y)| x * y).collect();
                    add_into(slot(&mut grads, &nodes, *a), &ga);
                    add_into(slot(&mut grads, &nodes, *b), &gb);
                }
                Op::Scale(a, k) => {
                    let ga = slot(&mut grads, &nodes, *a);
                    for (d, s) in ga.iter_mut().zip(&g) {
                        *d += k * s;
                    }
                }
                Op::AddRow { m, r } => {
                    add_into(slot(&mut grads, &nodes, *m), &g);
                    let n = nodes[*r].value.len();
                    let gr = slot(&mut grads, &nodes, *r);
                    for row in g.chunks(n) {
                        add_into(gr, row);
                    }
                }
                Op::Linear { w, x, b } => {
                    let wt = &nodes[*w].value;
                    let xt = &nodes[*x].value;
                    let n = wt.shape()[1];
                    let mut gx = vec![0.0; n];
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        let row = &wt.data()[i * n..(i + 1) * n];
                        for (d, wv) in gx.iter_mut().zip(row) {
                            *d += gi * wv;
                        }
                    }
                    {
                        let gw = slot(&mut grads, &nodes, *w);
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i * n..(i + 1) * n];
                            for (d, xv) in row.iter_mut().zip(xt.data()) {
                                *d += gi * xv;
                            }
                        }
                    }
                    add_into(slot(&mut grads, &nodes, *x), &gx);
                    if let Some(b) = b {
                        add_into(slot(&mut grads, &nodes, *b), &g);
                    }
                }
                Op::MatVecT { w, x } => {
                    let wt = &nodes[*w].value;
                    let xt = &nodes[*x].value;
                    let n = wt.shape()[1];
                    let gx: Vec<f64> = (0..wt.shape()[0])
                        .map(|i| wt.row(i).iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    {
                        let gw = slot(&mut grads, &nodes, *w);
                        for (i, xi) in xt.data().iter().enumerate() {
                            let row = &mut gw[i * n..(i + 1) * n];
                            for (d, gj) in row.iter_mut().zip(&g) {
                                *d += xi * gj;
                            }
                        }
                    }
                    add_into(slot(&mut grads, &nodes, *x), &gx);
                }
                Op::MatMulNT { a, b } => {
                    let at = &nodes[*a].value;
                    let bt = &nodes[*b].value;
                    let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                ga[i * k + l] += gij * bt.data()[j * k + l];
                                gb[j * k + l] += gij * at.data()[i * k + l];
                            }
                        }
                    }
                    add_into(slot(&mut grads, &nodes, *a), &ga);
                    add_into(slot(&mut grads, &nodes, *b), &gb);
                }
                Op::Outer(a, b) => {
                    let at = &nodes[*a].value;
                    let bt = &nodes[*b].value;
                    let n = bt.len();
                    let ga: Vec<f64> = (0..at.len())
                        .map(|i| g[i * n..(i + 1) * n].iter().zip(bt.data()).map(|(x, y)| x * y).sum())
                        .collect();
                    let mut gb = vec![0.0; n];
                    for (i, ai) in at.data().iter().enumerate() {
                        for (d, gij) in gb.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *d += ai * gij;
                        }
                    }
                    add_into(slot(&mut grads, &nodes, *a), &ga);
                    add_into(slot(&mut grads, &nodes, *b), &gb);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, &nodes, *a);
                    for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, &nodes, *a);
                    for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(x, y)| x * y).sum();
                    let ga = slot(&mut grads, &nodes, *a);
                    for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *d += yi * (gi - dot);
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let total: f64 = g.iter().sum();
                    let ga = slot(&mut grads, &nodes, *a);
                    for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *d += gi - yi.exp() * total;
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let n = node.value.cols();
                    let y = node.value.data();
                    let ga = slot(&mut grads, &nodes, *a);
                    for ((drow, grow), yrow) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let total: f64 = grow.iter().sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gi - yi.exp() * total;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = nodes[*p].value.len();
                        add_into(slot(&mut grads, &nodes, *p), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { a, start } => {
                    let n = g.len();
                    let ga = slot(&mut grads, &nodes, *a);
                    add_into(&mut ga[*start..*start + n], &g);
                }
                Op::Stack(rows) => {
                    let n = node.value.cols();
                    for (r, chunk) in rows.iter().zip(g.chunks(n)) {
                        add_into(slot(&mut grads, &nodes, *r), chunk);
                    }
                }
                Op::Row { m, i } => {
                    let n = g.len();
                    let gm = slot(&mut grads, &nodes, *m);
                    add_into(&mut gm[i * n..(i + 1) * n], &g);
                }
                Op::Max2(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let mut ga = vec![0.0; g.len()];
                    let mut gb = vec![0.0; g.len()];
                    for i in 0..g.len() {
                        if av[i] >= bv[i] {
                            ga[i] = g[i];
                        } else {
                            gb[i] = g[i];
                        }
                    }
                    add_into(slot(&mut grads, &nodes, *a), &ga);
                    add_into(slot(&mut grads, &nodes, *b), &gb);
                }
                Op::Sum(a) => {
                    let ga = slot(&mut grads, &nodes, *a);
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = nodes[*b].value.data().iter().map(|v| v * g[0]).collect();
                    let gb: Vec<f64> = nodes[*a].value.data().iter().map(|v| v * g[0]).collect();
                    add_into(slot(&mut grads, &nodes, *a), &ga);
                    add_into(slot(&mut grads, &nodes, *b), &gb);
                }
                Op::Pick { a, idx } => {
                    slot(&mut grads, &nodes, *a)[*idx] += g[0];
                }
                Op::Masked { a, mask } => {
                    let ga = slot(&mut grads, &nodes, *a);
                    for ((d, gi), m) in ga.iter_mut().zip(&g).zip(mask) {
                        *d += gi * m;
                    }
                }
                Op::SmoothedNll { logp, q } => {
                    let ga = slot(&mut grads, &nodes, *logp);
                    for (d, qv) in ga.iter_mut().zip(q) {
                        *d -= g[0] * qv;
                    }
                }
                Op::ScalarWithGrad { a, grad } => {
                    let ga = slot(&mut grads, &nodes, *a);
                    for (d, gv) in ga.iter_mut().zip(grad) {
                        *d += g[0] * gv;
                    }
                }
            }
        }
        if !acc.all_finite() {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.value(self.id).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.value(self.id).data().to_vec()
    }

    /// First element; the value of a scalar.
    pub fn scalar(&self) -> f64 {
        self.tape.value(self.id).data()[0]
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value(self.id))
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let v = f(&self.tape.value(self.id));
        self.tape.push(v, op)
    }

    fn zip_with(&self, other: Var<'t>, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let a = self.tape.value(self.id);
        let b = self.tape.value(other.id);
        if a.shape() != b.shape() {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.tape.push(v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.tape.push(v, Op::Mul(self.id, other.id)))
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn max(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "max", f64::max)?;
        Ok(self.tape.push(v, Op::Max2(self.id, other.id)))
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |t| {
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * k).collect())
        })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |t| {
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| sigmoid(v)).collect())
        })
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |t| {
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v.tanh()).collect())
        })
    }

    pub fn softmax(&self) -> Var<'t> {
        self.unary(Op::Softmax(self.id), |t| {
            let lse = log_sum_exp(t.data());
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| (v - lse).exp()).collect())
        })
    }

    pub fn log_softmax(&self) -> Var<'t> {
        self.unary(Op::LogSoftmax(self.id), |t| {
            let lse = log_sum_exp(t.data());
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v - lse).collect())
        })
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax_rows(&self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |t| {
            let n = t.cols();
            let mut out = Vec::with_capacity(t.len());
            for row in t.data().chunks(n) {
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|v| v - lse));
            }
            Tensor::from_parts(t.shape().to_vec(), out)
        })
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |t| Tensor::scalar(t.data().iter().sum()))
    }

    pub fn dot(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            if a.len() != b.len() {
                return Err(shape_err(format!("dot {:?} . {:?}", a.shape(), b.shape())));
            }
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
        };
        Ok(self.tape.push(Tensor::scalar(v), Op::Dot(self.id, other.id)))
    }

    /// Element `idx` as a scalar.
    pub fn pick(&self, idx: usize) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            *t.data()
                .get(idx)
                .ok_or_else(|| shape_err(format!("pick {idx} from {:?}", t.shape())))?
        };
        Ok(self.tape.push(Tensor::scalar(v), Op::Pick { a: self.id, idx }))
    }

    /// Sub-vector `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            if t.shape().len() != 1 || start + len > t.len() || len == 0 {
                return Err(shape_err(format!("slice {start}+{len} of {:?}", t.shape())));
            }
            t.data()[start..start + len].to_vec()
        };
        Ok(self.tape.push(Tensor::vector(v), Op::Slice { a: self.id, start }))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&self, i: usize) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            if t.shape().len() != 2 || i >= t.rows() {
                return Err(shape_err(format!("row {i} of {:?}", t.shape())));
            }
            t.row(i).to_vec()
        };
        Ok(self.tape.push(Tensor::vector(v), Op::Row { m: self.id, i }))
    }

    /// Adds vector `r` to every row of this matrix.
    pub fn add_row(&self, r: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let m = self.tape.value(self.id);
            let rv = self.tape.value(r.id);
            if m.shape().len() != 2 || rv.shape() != [m.cols()] {
                return Err(shape_err(format!("add_row {:?} + {:?}", m.shape(), rv.shape())));
            }
            let n = m.cols();
            let data = m
                .data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(rv.data()).map(|(a, b)| a + b))
                .collect();
            Tensor::from_parts(m.shape().to_vec(), data)
        };
        Ok(self.tape.push(v, Op::AddRow { m: self.id, r: r.id }))
    }

    /// `selfᵀ x` for this `m x n` matrix and a vector of length `m`.
    pub fn matvec_t(&self, x: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let w = self.tape.value(self.id);
            let xv = self.tape.value(x.id);
            if w.shape().len() != 2 || xv.shape() != [w.rows()] {
                return Err(shape_err(format!("matvec_t {:?}ᵀ x {:?}", w.shape(), xv.shape())));
            }
            let n = w.cols();
            let mut out = vec![0.0; n];
            for (i, xi) in xv.data().iter().enumerate() {
                for (o, wv) in out.iter_mut().zip(w.row(i)) {
                    *o += xi * wv;
                }
            }
            out
        };
        Ok(self.tape.push(Tensor::vector(v), Op::MatVecT { w: self.id, x: x.id }))
    }

    /// Multiplies elementwise by a constant mask.
    pub fn masked(&self, mask: Vec<f64>) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            if mask.len() != t.len() {
                return Err(shape_err("mask length".into()));
            }
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(a, m)| a * m).collect())
        };
        Ok(self.tape.push(v, Op::Masked { a: self.id, mask }))
    }

    /// `-Σ_v q_v · self_v` for log-probabilities `self` and a fixed target distribution `q`.
    pub fn smoothed_nll(&self, q: Vec<f64>) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            if q.len() != t.len() {
                return Err(shape_err("target distribution length".into()));
            }
            -t.data().iter().zip(&q).map(|(l, qv)| l * qv).sum::<f64>()
        };
        Ok(self.tape.push(Tensor::scalar(v), Op::SmoothedNll { logp: self.id, q }))
    }

    /// Records a scalar `value` that depends on this var with a precomputed gradient.
    pub fn scalar_with_grad(&self, value: f64, grad: Tensor) -> Result<Var<'t>> {
        if grad.shape() != self.tape.value(self.id).shape() {
            return Err(shape_err("custom gradient shape".into()));
        }
        Ok(self.tape.push(
            Tensor::scalar(value),
            Op::ScalarWithGrad {
                a: self.id,
                grad: grad.into_data(),
            },
        ))
    }
}
