//! Reverse-mode tape over dense row-major tensors.
//!
//! Every node stores its forward value. A reverse sweep propagates
//! adjoints; [`Tape::hvp`] first pushes a tangent forward through the
//! recorded graph and then sweeps (adjoint, adjoint-tangent) pairs back,
//! which yields Hessian-vector products without re-recording anything.

use super::AdError;
use crate::linalg::{gemm, MatRef};
use std::sync::Arc;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A scalar function of several vector inputs with its own derivative code.
///
/// `eval` returns the value together with the gradient with respect to each
/// input; `hvp` returns, for each input, the Hessian block row applied to
/// the given directions (absent directions are zero).
pub trait Functional: Send + Sync {
    fn name(&self) -> &'static str {
        "functional"
    }
    fn eval(&self, xs: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>), String>;
    fn hvp(&self, xs: &[&[f64]], dirs: &[Option<&[f64]>]) -> Result<Vec<Vec<f64>>, String>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Ln(Var),
    Powi(Var, i32),
    Sum(Var),
    Dot(Var, Var),
    /// `A·Bᵀ` for `A: m×k`, `B: n×k`.
    MatMulT(Var, Var),
    /// Adds a length-`n` row to every row of an `m×n` matrix.
    AddRow(Var, Var),
    Gather(Var, Arc<[usize]>),
    /// Copies the input and replaces entries at fixed positions by constants.
    Overwrite(Var, Arc<[usize]>),
    Functional {
        inputs: Vec<Var>,
        f: Arc<dyn Functional>,
        grads: Vec<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Powi(..) => "powi",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::MatMulT(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Gather(..) => "gather",
            Op::Overwrite(..) => "overwrite",
            Op::Functional { f, .. } => f.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) | Op::MatMulT(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Powi(a, _)
            | Op::Sum(a)
            | Op::Gather(a, _)
            | Op::Overwrite(a, _) => vec![*a],
            Op::Functional { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    /// Sin keeps cos(x) here, Cos keeps sin(x).
    aux: Vec<f64>,
}

/// Per-node adjoints from a reverse sweep.
pub struct Adjoints {
    bars: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Adjoints {
    /// Adjoint of `v`; zeros if the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.bars[v.0].clone().unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }

    pub fn take(&mut self, v: Var) -> Vec<f64> {
        self.bars[v.0].take().unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    error: Option<AdError>,
}

type Slot = Option<Vec<f64>>;

fn acc(slot: &mut Slot, contrib: Vec<f64>) {
    match slot {
        Some(s) => s.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
        None => *slot = Some(contrib),
    }
}

fn acc_scaled(slot: &mut Slot, k: f64, x: &[f64]) {
    match slot {
        Some(s) => s.iter_mut().zip(x).for_each(|(a, b)| *a += k * b),
        None => *slot = Some(x.iter().map(|b| k * b).collect()),
    }
}

/// Branch-free finiteness test: `x·0` is NaN exactly for non-finite `x`.
fn all_finite(x: &[f64]) -> bool {
    let mut acc = [0.0f64; 4];
    let mut chunks = x.chunks_exact(4);
    for ch in &mut chunks {
        for k in 0..4 {
            acc[k] += ch[k] * 0.0;
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|v| v * 0.0).sum();
    (acc[0] + acc[1] + acc[2] + acc[3] + tail) == 0.0
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// First non-finite value or failed functional recorded so far.
    pub fn check(&self) -> Result<(), AdError> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, aux: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        if self.error.is_none() && !all_finite(&value) {
            self.error = Some(AdError::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            aux,
        });
        Var(id)
    }

    /// A leaf. Whether it is differentiated is decided per sweep.
    pub fn input(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(Op::Leaf, rows, cols, value, Vec::new())
    }

    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.input(value, n, 1)
    }

    fn same_shape(&self, a: Var, b: Var) -> (usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.0 * sa.1, sb.0 * sb.1, "elementwise operands differ in size");
        sa
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.same_shape(a, b);
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), r, c, v, Vec::new())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.same_shape(a, b);
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), r, c, v, Vec::new())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.same_shape(a, b);
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), r, c, v, Vec::new())
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a).iter().map(|x| k * x).collect();
        self.push(Op::Scale(a, k), r, c, v, Vec::new())
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let (s, co) = super::trig::sin_cos_all(self.value(a));
        self.push(Op::Sin(a), r, c, s, co)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let (s, co) = super::trig::sin_cos_all(self.value(a));
        self.push(Op::Cos(a), r, c, co, s)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), r, c, v, Vec::new())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a).iter().map(|x| x.ln()).collect();
        self.push(Op::Ln(a), r, c, v, Vec::new())
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a).iter().map(|x| x.powi(n)).collect();
        self.push(Op::Powi(a, n), r, c, v, Vec::new())
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        self.push(Op::Sum(a), 1, 1, vec![v], Vec::new())
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let v = crate::linalg::dot(self.value(a), self.value(b));
        self.push(Op::Dot(a, b), 1, 1, vec![v], Vec::new())
    }

    /// `a·bᵀ` with `a: m×k` and `b: n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::new(self.value(a), m, k),
            MatRef::new(self.value(b), n, k).t(),
            0.0,
            &mut out,
        );
        self.push(Op::MatMulT(a, b), m, n, out, Vec::new())
    }

    /// `m·x` for a row-major `m: r×k` and a length-`k` vector, as a column.
    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let (_, k) = self.shape(m);
        let (xr, xc) = self.shape(x);
        assert_eq!(xr * xc, k, "matvec dimensions differ");
        // (1×k)·(r×k)ᵀ = 1×r holds the same numbers as the column m·x.
        let xrow = if xr == 1 { x } else { self.reshape_row(x) };
        let y = self.matmul_t(xrow, m);
        let n = self.shape(y).1;
        self.nodes[y.0].rows = n;
        self.nodes[y.0].cols = 1;
        y
    }

    fn reshape_row(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).to_vec();
        self.push(Op::Scale(x, 1.0), 1, r * c, v, Vec::new())
    }

    /// Adds the length-`n` vector `row` to each row of `a: m×n`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        let (rr, rc) = self.shape(row);
        assert_eq!(rr * rc, n, "broadcast row length");
        let rv = self.value(row).to_vec();
        let mut v = self.value(a).to_vec();
        for chunk in v.chunks_exact_mut(n) {
            chunk.iter_mut().zip(&rv).for_each(|(x, y)| *x += y);
        }
        self.push(Op::AddRow(a, row), m, n, v, Vec::new())
    }

    pub fn gather(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let av = self.value(a);
        let v: Vec<f64> = idx.iter().map(|&i| av[i]).collect();
        let n = v.len();
        self.push(Op::Gather(a, idx), n, 1, v, Vec::new())
    }

    /// Same shape as `a`, with `a[idx[i]]` replaced by `values[i]`.
    pub fn overwrite(&mut self, a: Var, idx: Arc<[usize]>, values: &[f64]) -> Var {
        assert_eq!(idx.len(), values.len(), "overwrite index/value lengths");
        let (r, c) = self.shape(a);
        let mut v = self.value(a).to_vec();
        for (&i, &x) in idx.iter().zip(values) {
            v[i] = x;
        }
        self.push(Op::Overwrite(a, idx), r, c, v, Vec::new())
    }

    /// Scalar node evaluated by an external [`Functional`].
    pub fn functional(&mut self, inputs: &[Var], f: Arc<dyn Functional>) -> Var {
        let res = {
            let xs: Vec<&[f64]> = inputs.iter().map(|&v| self.value(v)).collect();
            f.eval(&xs)
        };
        let (value, grads) = match res {
            Ok(r) => r,
            Err(msg) => {
                if self.error.is_none() {
                    self.error = Some(AdError::Functional {
                        node: self.nodes.len(),
                        message: msg,
                    });
                }
                (f64::NAN, inputs.iter().map(|&v| vec![0.0; self.value(v).len()]).collect())
            }
        };
        self.push(
            Op::Functional {
                inputs: inputs.to_vec(),
                f,
                grads,
            },
            1,
            1,
            vec![value],
            Vec::new(),
        )
    }

    /// Marks every node on a path from one of `wrt` to `out`.
    fn needed(&self, out: Var, wrt: &[Var]) -> Vec<bool> {
        let mut need = vec![false; out.0 + 1];
        for w in wrt {
            if w.0 <= out.0 {
                need[w.0] = true;
            }
        }
        for i in 0..=out.0 {
            if !need[i] {
                need[i] = self.nodes[i].op.inputs().iter().any(|v| need[v.0]);
            }
        }
        need
    }

    fn lens(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.value.len()).collect()
    }

    /// Reverse sweep from scalar `out`, restricted to paths reaching `wrt`.
    pub fn gradient(&self, out: Var, wrt: &[Var]) -> Result<Adjoints, AdError> {
        self.check()?;
        assert_eq!(self.nodes[out.0].value.len(), 1, "gradient of a non-scalar");
        let need = self.needed(out, wrt);
        let mut bars: Vec<Slot> = vec![None; self.nodes.len()];
        bars[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            if !need[i] {
                continue;
            }
            let Some(bar) = bars[i].take() else { continue };
            self.backprop(i, &bar, &need, &mut bars);
            bars[i] = Some(bar);
        }
        Ok(Adjoints {
            bars,
            lens: self.lens(),
        })
    }

    fn backprop(&self, i: usize, bar: &[f64], need: &[bool], bars: &mut [Slot]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need[a.0] {
                    acc_scaled(&mut bars[a.0], 1.0, bar);
                }
                if need[b.0] {
                    acc_scaled(&mut bars[b.0], 1.0, bar);
                }
            }
            Op::Sub(a, b) => {
                if need[a.0] {
                    acc_scaled(&mut bars[a.0], 1.0, bar);
                }
                if need[b.0] {
                    acc_scaled(&mut bars[b.0], -1.0, bar);
                }
            }
            Op::Mul(a, b) => {
                if need[a.0] {
                    acc(&mut bars[a.0], zip_map(bar, val(*b), |x, y| x * y));
                }
                if need[b.0] {
                    acc(&mut bars[b.0], zip_map(bar, val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, k) => acc_scaled(&mut bars[a.0], *k, bar),
            Op::Sin(a) => acc(&mut bars[a.0], zip_map(bar, &node.aux, |x, c| x * c)),
            Op::Cos(a) => acc(&mut bars[a.0], zip_map(bar, &node.aux, |x, s| -x * s)),
            Op::Exp(a) => acc(&mut bars[a.0], zip_map(bar, &node.value, |x, y| x * y)),
            Op::Ln(a) => acc(&mut bars[a.0], zip_map(bar, val(*a), |x, y| x / y)),
            Op::Powi(a, n) => {
                let n = *n;
                acc(
                    &mut bars[a.0],
                    zip_map(bar, val(*a), |x, y| x * n as f64 * y.powi(n - 1)),
                )
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                acc(&mut bars[a.0], vec![bar[0]; len])
            }
            Op::Dot(a, b) => {
                if need[a.0] {
                    acc_scaled(&mut bars[a.0], bar[0], val(*b));
                }
                if need[b.0] {
                    acc_scaled(&mut bars[b.0], bar[0], val(*a));
                }
            }
            Op::MatMulT(a, b) => {
                let (m, n) = (node.rows * node.cols / self.nodes[b.0].rows, self.nodes[b.0].rows);
                let k = self.nodes[a.0].value.len() / m;
                if need[a.0] {
                    let mut g = vec![0.0; m * k];
                    gemm(1.0, MatRef::new(bar, m, n), MatRef::new(val(*b), n, k), 0.0, &mut g);
                    acc(&mut bars[a.0], g);
                }
                if need[b.0] {
                    let mut g = vec![0.0; n * k];
                    gemm(1.0, MatRef::new(bar, m, n).t(), MatRef::new(val(*a), m, k), 0.0, &mut g);
                    acc(&mut bars[b.0], g);
                }
            }
            Op::AddRow(a, r) => {
                if need[a.0] {
                    acc_scaled(&mut bars[a.0], 1.0, bar);
                }
                if need[r.0] {
                    acc(&mut bars[r.0], col_sums(bar, node.cols));
                }
            }
            Op::Gather(a, idx) => {
                let mut g = vec![0.0; val(*a).len()];
                for (&j, &x) in idx.iter().zip(bar) {
                    g[j] += x;
                }
                acc(&mut bars[a.0], g);
            }
            Op::Overwrite(a, idx) => {
                let mut g = bar.to_vec();
                for &j in idx.iter() {
                    g[j] = 0.0;
                }
                acc(&mut bars[a.0], g);
            }
            Op::Functional { inputs, grads, .. } => {
                for (v, g) in inputs.iter().zip(grads) {
                    if need[v.0] {
                        acc_scaled(&mut bars[v.0], bar[0], g);
                    }
                }
            }
        }
    }

    /// Forward-over-reverse sweep. Seeds a tangent on the given leaves,
    /// pushes it forward, and returns `(∇out, (∇²out)·t)` restricted to
    /// paths reaching `wrt`.
    pub fn hvp(&self, out: Var, seeds: &[(Var, &[f64])], wrt: &[Var]) -> Result<(Adjoints, Adjoints), AdError> {
        self.check()?;
        assert_eq!(self.nodes[out.0].value.len(), 1, "hvp of a non-scalar");
        let tans = self.tangents(out, seeds);
        let need = self.needed(out, wrt);
        let mut bars: Vec<Slot> = vec![None; self.nodes.len()];
        let mut dbars: Vec<Slot> = vec![None; self.nodes.len()];
        bars[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            if !need[i] {
                continue;
            }
            let Some(bar) = bars[i].take() else { continue };
            let dbar = dbars[i].take();
            self.backprop(i, &bar, &need, &mut bars);
            if let Some(db) = &dbar {
                self.backprop(i, db, &need, &mut dbars);
            }
            self.backprop_second(i, &bar, &tans, &need, &mut dbars)?;
            bars[i] = Some(bar);
            dbars[i] = dbar;
        }
        let lens = self.lens();
        Ok((
            Adjoints {
                bars,
                lens: lens.clone(),
            },
            Adjoints { bars: dbars, lens },
        ))
    }

    /// Jacobian-vector product: tangent of every node given leaf tangents.
    pub fn jvp(&self, out: Var, seeds: &[(Var, &[f64])]) -> Vec<f64> {
        let tans = self.tangents(out, seeds);
        tans[out.0].clone().unwrap_or_else(|| vec![0.0; self.nodes[out.0].value.len()])
    }

    fn tangents(&self, out: Var, seeds: &[(Var, &[f64])]) -> Vec<Slot> {
        let mut tans: Vec<Slot> = vec![None; out.0 + 1];
        for (v, t) in seeds {
            assert_eq!(t.len(), self.nodes[v.0].value.len(), "seed length");
            if v.0 <= out.0 {
                tans[v.0] = Some(t.to_vec());
            }
        }
        for i in 0..=out.0 {
            if tans[i].is_some() {
                continue;
            }
            let node = &self.nodes[i];
            let t = |v: &Var| tans[v.0].as_deref();
            let val = |v: &Var| self.nodes[v.0].value.as_slice();
            let new = match &node.op {
                Op::Leaf => None,
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    match (t(a), t(b)) {
                        (None, None) => None,
                        (Some(x), None) => Some(x.to_vec()),
                        (None, Some(y)) => Some(y.iter().map(|v| sign * v).collect()),
                        (Some(x), Some(y)) => Some(zip_map(x, y, |p, q| p + sign * q)),
                    }
                }
                Op::Mul(a, b) => {
                    let mut r: Slot = None;
                    if let Some(x) = t(a) {
                        acc(&mut r, zip_map(x, val(b), |p, q| p * q));
                    }
                    if let Some(y) = t(b) {
                        acc(&mut r, zip_map(val(a), y, |p, q| p * q));
                    }
                    r
                }
                Op::Scale(a, k) => t(a).map(|x| x.iter().map(|v| k * v).collect()),
                Op::Sin(a) => t(a).map(|x| zip_map(x, &node.aux, |p, c| p * c)),
                Op::Cos(a) => t(a).map(|x| zip_map(x, &node.aux, |p, s| -p * s)),
                Op::Exp(a) => t(a).map(|x| zip_map(x, &node.value, |p, y| p * y)),
                Op::Ln(a) => t(a).map(|x| zip_map(x, val(a), |p, y| p / y)),
                Op::Powi(a, n) => {
                    let n = *n;
                    t(a).map(|x| zip_map(x, val(a), |p, y| p * n as f64 * y.powi(n - 1)))
                }
                Op::Sum(a) => t(a).map(|x| vec![x.iter().sum()]),
                Op::Dot(a, b) => {
                    let mut s = None;
                    if let Some(x) = t(a) {
                        s = Some(crate::linalg::dot(x, val(b)));
                    }
                    if let Some(y) = t(b) {
                        s = Some(s.unwrap_or(0.0) + crate::linalg::dot(val(a), y));
                    }
                    s.map(|v| vec![v])
                }
                Op::MatMulT(a, b) => {
                    let n = self.nodes[b.0].rows;
                    let m = node.value.len() / n;
                    let k = self.nodes[a.0].value.len() / m;
                    let mut r = None;
                    if let Some(x) = t(a) {
                        let mut o = vec![0.0; m * n];
                        gemm(1.0, MatRef::new(x, m, k), MatRef::new(val(b), n, k).t(), 0.0, &mut o);
                        r = Some(o);
                    }
                    if let Some(y) = t(b) {
                        let mut o = r.unwrap_or_else(|| vec![0.0; m * n]);
                        gemm(1.0, MatRef::new(val(a), m, k), MatRef::new(y, n, k).t(), 1.0, &mut o);
                        r = Some(o);
                    }
                    r
                }
                Op::AddRow(a, row) => match (t(a), t(row)) {
                    (None, None) => None,
                    (x, y) => {
                        let mut o = x.map_or_else(|| vec![0.0; node.value.len()], |x| x.to_vec());
                        if let Some(y) = y {
                            for chunk in o.chunks_exact_mut(node.cols) {
                                chunk.iter_mut().zip(y).for_each(|(p, q)| *p += q);
                            }
                        }
                        Some(o)
                    }
                },
                Op::Gather(a, idx) => t(a).map(|x| idx.iter().map(|&j| x[j]).collect()),
                Op::Overwrite(a, idx) => t(a).map(|x| {
                    let mut o = x.to_vec();
                    for &j in idx.iter() {
                        o[j] = 0.0;
                    }
                    o
                }),
                Op::Functional { inputs, grads, .. } => {
                    let mut s = None;
                    for (v, g) in inputs.iter().zip(grads) {
                        if let Some(x) = t(v) {
                            s = Some(s.unwrap_or(0.0) + crate::linalg::dot(x, g));
                        }
                    }
                    s.map(|v| vec![v])
                }
            };
            tans[i] = new;
        }
        tans
    }

    /// Terms of the adjoint tangent that involve the forward tangent of the
    /// inputs (the curvature of each op), `ȳ · ∂²y/∂x² · ẋ`.
    fn backprop_second(
        &self,
        i: usize,
        bar: &[f64],
        tans: &[Slot],
        need: &[bool],
        dbars: &mut [Slot],
    ) -> Result<(), AdError> {
        let node = &self.nodes[i];
        let t = |v: &Var| tans[v.0].as_deref();
        let val = |v: &Var| self.nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf
            | Op::Add(..)
            | Op::Sub(..)
            | Op::Scale(..)
            | Op::Sum(_)
            | Op::AddRow(..)
            | Op::Gather(..)
            | Op::Overwrite(..) => {}
            Op::Mul(a, b) => {
                if need[a.0] {
                    if let Some(y) = t(b) {
                        acc(&mut dbars[a.0], zip_map(bar, y, |p, q| p * q));
                    }
                }
                if need[b.0] {
                    if let Some(x) = t(a) {
                        acc(&mut dbars[b.0], zip_map(bar, x, |p, q| p * q));
                    }
                }
            }
            Op::Sin(a) => {
                if let Some(x) = t(a) {
                    let v: Vec<f64> = bar
                        .iter()
                        .zip(&node.value)
                        .zip(x)
                        .map(|((b, s), xd)| -b * s * xd)
                        .collect();
                    acc(&mut dbars[a.0], v);
                }
            }
            Op::Cos(a) => {
                if let Some(x) = t(a) {
                    let v: Vec<f64> = bar
                        .iter()
                        .zip(&node.value)
                        .zip(x)
                        .map(|((b, c), xd)| -b * c * xd)
                        .collect();
                    acc(&mut dbars[a.0], v);
                }
            }
            Op::Exp(a) => {
                if let Some(x) = t(a) {
                    let v: Vec<f64> = bar
                        .iter()
                        .zip(&node.value)
                        .zip(x)
                        .map(|((b, y), xd)| b * y * xd)
                        .collect();
                    acc(&mut dbars[a.0], v);
                }
            }
            Op::Ln(a) => {
                if let Some(x) = t(a) {
                    let v: Vec<f64> = bar
                        .iter()
                        .zip(val(a))
                        .zip(x)
                        .map(|((b, y), xd)| -b * xd / (y * y))
                        .collect();
                    acc(&mut dbars[a.0], v);
                }
            }
            Op::Powi(a, n) => {
                if let Some(x) = t(a) {
                    let n = *n;
                    let v: Vec<f64> = bar
                        .iter()
                        .zip(val(a))
                        .zip(x)
                        .map(|((b, y), xd)| b * (n * (n - 1)) as f64 * y.powi(n - 2) * xd)
                        .collect();
                    acc(&mut dbars[a.0], v);
                }
            }
            Op::Dot(a, b) => {
                if need[a.0] {
                    if let Some(y) = t(b) {
                        acc_scaled(&mut dbars[a.0], bar[0], y);
                    }
                }
                if need[b.0] {
                    if let Some(x) = t(a) {
                        acc_scaled(&mut dbars[b.0], bar[0], x);
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let n = self.nodes[b.0].rows;
                let m = node.value.len() / n;
                let k = self.nodes[a.0].value.len() / m;
                if need[a.0] {
                    if let Some(y) = t(b) {
                        let mut g = vec![0.0; m * k];
                        gemm(1.0, MatRef::new(bar, m, n), MatRef::new(y, n, k), 0.0, &mut g);
                        acc(&mut dbars[a.0], g);
                    }
                }
                if need[b.0] {
                    if let Some(x) = t(a) {
                        let mut g = vec![0.0; n * k];
                        gemm(1.0, MatRef::new(bar, m, n).t(), MatRef::new(x, m, k), 0.0, &mut g);
                        acc(&mut dbars[b.0], g);
                    }
                }
            }
            Op::Functional { inputs, f, .. } => {
                let dirs: Vec<Option<&[f64]>> = inputs.iter().map(|v| t(v)).collect();
                if bar[0] != 0.0 && dirs.iter().any(Option::is_some) {
                    let xs: Vec<&[f64]> = inputs.iter().map(|v| val(v)).collect();
                    let hv = f.hvp(&xs, &dirs).map_err(|message| AdError::Functional { node: i, message })?;
                    for (v, h) in inputs.iter().zip(hv) {
                        if need[v.0] {
                            acc_scaled(&mut dbars[v.0], bar[0], &h);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn col_sums(m: &[f64], cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols];
    for chunk in m.chunks_exact(cols) {
        s.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
    }
    s
}

/// Value and gradient of a scalar function recorded by `f` at `x`.
pub fn grad(f: impl Fn(&mut Tape, Var) -> Var, x: &[f64]) -> Result<(f64, Vec<f64>), AdError> {
    let mut tape = Tape::new();
    let xv = tape.vector(x.to_vec());
    let y = f(&mut tape, xv);
    let mut adj = tape.gradient(y, &[xv])?;
    Ok((tape.scalar(y), adj.take(xv)))
}

/// `(∇²f)(x)·v` by forward-over-reverse.
pub fn hvp(f: impl Fn(&mut Tape, Var) -> Var, x: &[f64], v: &[f64]) -> Result<Vec<f64>, AdError> {
    assert_eq!(x.len(), v.len(), "direction length");
    let mut tape = Tape::new();
    let xv = tape.vector(x.to_vec());
    let y = f(&mut tape, xv);
    let (_, mut dadj) = tape.hvp(y, &[(xv, v)], &[xv])?;
    Ok(dadj.take(xv))
}
