//! Reverse-mode tape over row-batched matrices.
//!
//! Every node holds an `R×C` matrix. Elementwise primitives act on matching
//! shapes; `matmul_t` is the batched matrix-vector product `X·Wᵀ`. The
//! forward-mode quantities of a dual-number computation can be laid out as
//! separate nodes, which is how reverse-over-forward gradients are built.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::autodiff::dual::sigmoid;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    Powi(Var, i32),
    Sum(Var),
    Dot(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Cols(Var, usize),
    Concat(Var, Var),
    RepeatRows(Var, usize),
    RowMatVec(Var, Arc<Vec<f64>>, usize),
    PseudoInverse(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Dot(a, b) | Op::MatMulT(a, b) => {
                vec![*a, *b]
            }
            Op::AddRow(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Affine(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Silu(x)
            | Op::Powi(x, _)
            | Op::Sum(x)
            | Op::Cols(x, _)
            | Op::RepeatRows(x, _)
            | Op::RowMatVec(x, ..)
            | Op::PseudoInverse(x) => vec![*x],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Silu(..) => "silu",
            Op::Powi(..) => "powi",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::MatMulT(..) => "matmul_t",
            Op::AddRow(..) => "add_row",
            Op::Cols(..) => "cols",
            Op::Concat(..) => "concat",
            Op::RepeatRows(..) => "repeat_rows",
            Op::RowMatVec(..) => "row_matvec",
            Op::PseudoInverse(..) => "pseudo_inverse",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Single-owner record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves of a tape after a backward sweep.
pub struct Gradients {
    adjoints: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`; `None` when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }
}

#[inline]
fn silu_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn val(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) + self.val(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) - self.val(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) * self.val(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) / self.val(b);
        self.push(v, Op::Div(a, b))
    }

    /// `scale·x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.val(x).mapv(|e| scale * e + shift);
        self.push(v, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.val(x).mapv(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.val(x).mapv(f64::ln);
        self.push(v, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.val(x).mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.val(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.val(x).mapv(|e| e * sigmoid(e));
        self.push(v, Op::Silu(x))
    }

    pub fn powi(&mut self, x: Var, n: i32) -> Var {
        let v = self.val(x).mapv(|e| e.powi(n));
        self.push(v, Op::Powi(x, n))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.val(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Frobenius inner product, as a `1×1` node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = Zip::from(self.val(a)).and(self.val(b)).fold(0.0, |acc, x, y| acc + x * y);
        self.push(Array2::from_elem((1, 1), s), Op::Dot(a, b))
    }

    /// Row-batched matrix-vector product `X·Wᵀ` for `X: R×in`, `W: out×in`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let v = self.val(x).dot(&self.val(w).t());
        self.push(v, Op::MatMulT(x, w))
    }

    /// Adds the `1×C` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.val(x) + self.val(b);
        self.push(v, Op::AddRow(x, b))
    }

    /// Contiguous column block `[start, start + len)`.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.val(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::Cols(x, start))
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.val(a).view(), self.val(b).view()])
            .expect("concat: row counts differ");
        self.push(v, Op::Concat(a, b))
    }

    /// Repeats each row `k` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, k: usize) -> Var {
        let src = self.val(x);
        let (r, c) = src.dim();
        let mut v = Array2::zeros((r * k, c));
        for (i, row) in src.rows().into_iter().enumerate() {
            for j in 0..k {
                v.row_mut(i * k + j).assign(&row);
            }
        }
        self.push(v, Op::RepeatRows(x, k))
    }

    /// Row `r` of the output is `M_{r / group}·x_r`, with `mats` holding one
    /// row-major `n×n` constant matrix per group.
    pub fn row_matvec(&mut self, x: Var, mats: Arc<Vec<f64>>, group: usize) -> Var {
        let src = self.val(x);
        let (r, n) = src.dim();
        let mut v = Array2::zeros((r, n));
        for i in 0..r {
            let m = &mats[(i / group) * n * n..(i / group + 1) * n * n];
            for a in 0..n {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += m[a * n + b] * src[[i, b]];
                }
                v[[i, a]] = acc;
            }
        }
        self.push(v, Op::RowMatVec(x, mats, group))
    }

    /// Moore-Penrose pseudo-inverse of a full-column-rank matrix.
    pub fn pseudo_inverse(&mut self, a: Var) -> Result<Var> {
        let v = linalg::pseudo_inverse(self.val(a).view())?;
        Ok(self.push(v, Op::PseudoInverse(a)))
    }

    /// Reverse sweep from the `1×1` node `y`.
    pub fn backward(&self, y: Var) -> Result<Gradients> {
        let grads = self.sweep(y, false)?;
        let finite = grads.adjoints.iter().flatten().all(|a| a.iter().all(|e| e.is_finite()));
        if finite {
            Ok(grads)
        } else {
            // locate the first node whose adjoint contribution breaks
            self.sweep(y, true).map(|_| grads)
        }
    }

    fn sweep(&self, y: Var, check: bool) -> Result<Gradients> {
        let n = y.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        adj[y.0] = Some(Array2::ones(self.nodes[y.0].value.dim()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    add_to(&mut adj, *a, g.view());
                    put(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    put(&mut adj, *b, -&g);
                    put(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    put(&mut adj, *a, &g * self.val(*b));
                    let mut g = g;
                    g *= self.val(*a);
                    put(&mut adj, *b, g);
                }
                Op::Div(a, b) => {
                    let gb = g / self.val(*b);
                    put(&mut adj, *b, -(&gb * out));
                    put(&mut adj, *a, gb);
                }
                Op::Affine(x, c) => put(&mut adj, *x, g * *c),
                Op::Exp(x) => put(&mut adj, *x, g * out),
                Op::Log(x) => put(&mut adj, *x, g / self.val(*x)),
                Op::Tanh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(out).for_each(|d, &t| *d *= 1.0 - t * t);
                    put(&mut adj, *x, d);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(out).for_each(|d, &s| *d *= s * (1.0 - s));
                    put(&mut adj, *x, d);
                }
                Op::Silu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.val(*x)).for_each(|d, &v| *d *= silu_d1(v));
                    put(&mut adj, *x, d);
                }
                Op::Powi(x, p) => {
                    let mut d = g;
                    let p = *p;
                    Zip::from(&mut d)
                        .and(self.val(*x))
                        .for_each(|d, &v| *d *= if p == 0 { 0.0 } else { p as f64 * v.powi(p - 1) });
                    put(&mut adj, *x, d);
                }
                Op::Sum(x) => {
                    let gs = g[[0, 0]];
                    put(&mut adj, *x, Array2::from_elem(self.val(*x).dim(), gs));
                }
                Op::Dot(a, b) => {
                    let gs = g[[0, 0]];
                    put(&mut adj, *a, self.val(*b) * gs);
                    put(&mut adj, *b, self.val(*a) * gs);
                }
                Op::MatMulT(x, w) => {
                    put(&mut adj, *x, g.dot(self.val(*w)));
                    put(&mut adj, *w, g.t().dot(self.val(*x)));
                }
                Op::AddRow(x, b) => {
                    put(&mut adj, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    put(&mut adj, *x, g);
                }
                Op::Cols(x, start) => {
                    let w = g.ncols();
                    let dim = self.val(*x).dim();
                    let acc = adj[x.0].get_or_insert_with(|| Array2::zeros(dim));
                    let mut block = acc.slice_mut(s![.., *start..*start + w]);
                    block += &g;
                }
                Op::Concat(a, b) => {
                    let ca = self.val(*a).ncols();
                    add_to(&mut adj, *a, g.slice(s![.., ..ca]));
                    add_to(&mut adj, *b, g.slice(s![.., ca..]));
                }
                Op::RepeatRows(x, k) => {
                    let dim = self.val(*x).dim();
                    let acc = adj[x.0].get_or_insert_with(|| Array2::zeros(dim));
                    for (i, row) in g.rows().into_iter().enumerate() {
                        let mut target = acc.row_mut(i / k);
                        target += &row;
                    }
                }
                Op::RowMatVec(x, mats, group) => {
                    let (r, nn) = g.dim();
                    let acc = adj[x.0].get_or_insert_with(|| Array2::zeros((r, nn)));
                    for i in 0..r {
                        let m = &mats[(i / group) * nn * nn..(i / group + 1) * nn * nn];
                        for a in 0..nn {
                            let ga = g[[i, a]];
                            for b in 0..nn {
                                acc[[i, b]] += m[a * nn + b] * ga;
                            }
                        }
                    }
                }
                Op::PseudoInverse(a) => {
                    // dL/dA = -A⁺ᵀ G A⁺ᵀ + (I - A A⁺) Gᵀ A⁺ A⁺ᵀ
                    let av = self.val(*a);
                    let p = out;
                    let pt = p.t();
                    let first = pt.dot(&g).dot(&pt);
                    let gram_inv = p.dot(&pt);
                    let gt_gi = g.t().dot(&gram_inv);
                    let proj = &gt_gi - &av.dot(&p.dot(&gt_gi));
                    put(&mut adj, *a, proj - first);
                }
            }
            if check && node.op.inputs().iter().any(|v| adj[v.0].as_ref().is_some_and(|a| a.iter().any(|e| !e.is_finite()))) {
                return Err(Error::NonFiniteAdjoint { node: i, op: node.op.name() });
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn put(adj: &mut [Option<Array2<f64>>], target: Var, c: Array2<f64>) {
    match &mut adj[target.0] {
        Some(acc) => *acc += &c,
        slot @ None => *slot = Some(c),
    }
}

fn add_to(adj: &mut [Option<Array2<f64>>], target: Var, c: ndarray::ArrayView2<f64>) {
    match &mut adj[target.0] {
        Some(acc) => *acc += &c,
        slot @ None => *slot = Some(c.to_owned()),
    }
}
