//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. `backward` walks the
//! tape in reverse and returns gradients for every parameter plus every node,
//! so gradients with respect to plain inputs (latent vectors, for instance)
//! come for free.

use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    SumAll(Var),
    SumCols(Var),
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`].
pub struct Grads {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Tensor>,
}

impl Grads {
    /// Gradient with respect to a node; zeros when the loss does not depend on it.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.index()]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph { params, param_vars: vec![None; params.len()], nodes: Vec::new() }
    }

    pub fn param_set(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.data.iter().all(|x| !x.is_nan()), "NaN produced by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A copy of `v`'s value that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(value, Op::Detach)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert!(rv.rows == 1 && rv.cols == av.cols, "add_row shape {:?} + {:?}", av.shape(), rv.shape());
        let mut v = av.clone();
        for r in 0..v.rows {
            for (x, y) in v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&rv.data) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiply every row of `a` by the matching entry of an `N x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert!(cv.cols == 1 && cv.rows == av.rows, "mul_col shape {:?} * {:?}", av.shape(), cv.shape());
        let mut v = av.clone();
        for r in 0..v.rows {
            let s = cv.data[r];
            for x in &mut v.data[r * v.cols..(r + 1) * v.cols] {
                *x *= s;
            }
        }
        self.push(v, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat row mismatch");
                v.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row_slice(r));
                off += pv.cols;
            }
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Columns `[start, end)`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start < end && end <= av.cols);
        let mut v = Tensor::zeros(av.rows, end - start);
        for r in 0..av.rows {
            v.data[r * (end - start)..(r + 1) * (end - start)].copy_from_slice(&av.row_slice(r)[start..end]);
        }
        self.push(v, Op::Slice(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `N x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Tensor::from_vec(av.rows, 1, (0..av.rows).map(|r| av.row_slice(r).iter().sum()).collect());
        self.push(v, Op::SumCols(a))
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params: Vec<Tensor> = self.params.values().map(|p| Tensor::zeros(p.rows, p.cols)).collect();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Detach => {}
                Op::Param(id) => params[id.index()].add_assign(&g),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip(self.value(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row_slice(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *row, gr);
                }
                Op::MulCol(a, col) => {
                    let cv = self.value(*col);
                    let av = self.value(*a);
                    let mut ga = g.clone();
                    let mut gc = Tensor::zeros(cv.rows, 1);
                    for r in 0..g.rows {
                        let s = cv.data[r];
                        let row = &mut ga.data[r * g.cols..(r + 1) * g.cols];
                        for x in row.iter_mut() {
                            *x *= s;
                        }
                        gc.data[r] = g.row_slice(r).iter().zip(av.row_slice(r)).map(|(x, y)| x * y).sum();
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, gc);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip(out, |x, y| x * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip(out, |x, y| x * y * (1.0 - y))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip(out, |x, y| x * y)),
                Op::Ln(a) => acc(&mut grads, *a, g.zip(self.value(*a), |x, y| x / y)),
                Op::Square(a) => acc(&mut grads, *a, g.zip(self.value(*a), |x, y| 2.0 * x * y)),
                Op::Sqrt(a) => acc(&mut grads, *a, g.zip(out, |x, y| 0.5 * x / y)),
                Op::Relu(a) => acc(&mut grads, *a, g.zip(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
                Op::Clamp(a, lo, hi) => {
                    acc(&mut grads, *a, g.zip(self.value(*a), |x, y| if y >= *lo && y <= *hi { x } else { 0.0 }))
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut gp = Tensor::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            gp.data[r * pc..(r + 1) * pc].copy_from_slice(&g.row_slice(r)[off..off + pc]);
                        }
                        acc(&mut grads, p, gp);
                        off += pc;
                    }
                }
                Op::Slice(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        ga.data[r * av.cols + start..r * av.cols + start + g.cols].copy_from_slice(g.row_slice(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        ga.data[i * c..(i + 1) * c].fill(g.data[i]);
                    }
                    acc(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }
        Grads { nodes: grads, params }
    }
}
