//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a `1 x 1` node propagates adjoints to every node
//! that depends on a parameter leaf.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Argument(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is held fixed.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x, y));
        }
        let v = x.matmul(y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, x, y));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| f(*p, *q))
            .collect();
        let v = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// `[n x m] + [1 x m]`, the bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_bias", x, b));
        }
        let m = x.cols();
        let mut v = x.clone();
        for (k, o) in v.data_mut().iter_mut().enumerate() {
            *o += b.data()[k % m];
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(v, Op::AddBias(a, bias), ng))
    }

    /// `[n x m] * [n x 1]`, each row scaled by its own factor.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, f) = (self.value(a), self.value(s));
        if f.cols() != 1 || f.rows() != x.rows() {
            return Err(shape_err("scale_rows", x, f));
        }
        let m = x.cols();
        let mut v = x.clone();
        for (k, o) in v.data_mut().iter_mut().enumerate() {
            *o *= f.data()[k / m.max(1)];
        }
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(v, Op::ScaleRows(a, s), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Argument("concat_cols of nothing".into()));
        };
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Argument(format!(
                "gather_rows index {bad} out of {} rows",
                x.rows()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * x.cols());
        for &i in index.iter() {
            data.extend_from_slice(x.row_slice(i));
        }
        let v = Tensor::from_vec(index.len(), x.cols(), data)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::GatherRows(a, index), ng))
    }

    /// Softmax of a `[k x 1]` column taken separately over each group of
    /// rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, segments: Rc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if x.cols() != 1 || x.rows() != segments.len() {
            return Err(Error::Argument(format!(
                "segment_softmax expects a column of {} rows, got {:?}",
                segments.len(),
                x.shape()
            )));
        }
        let n_seg = segments.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (k, &s) in segments.iter().enumerate() {
            max[s] = max[s].max(x.data()[k]);
        }
        let mut exp: Vec<f64> = segments
            .iter()
            .enumerate()
            .map(|(k, &s)| (x.data()[k] - max[s]).exp())
            .collect();
        let mut total = vec![0.0; n_seg];
        for (k, &s) in segments.iter().enumerate() {
            total[s] += exp[k];
        }
        for (k, &s) in segments.iter().enumerate() {
            exp[k] /= total[s];
        }
        let v = Tensor::column(&exp);
        let ng = self.ng(a);
        Ok(self.push(v, Op::SegmentSoftmax(a, segments), ng))
    }

    /// Sums rows of `a` into `n_segments` output rows by segment id.
    pub fn segment_sum(&mut self, a: Var, segments: Rc<[usize]>, n_segments: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != segments.len() || segments.iter().any(|&s| s >= n_segments) {
            return Err(Error::Argument("segment_sum ids do not match input".into()));
        }
        let m = x.cols();
        let mut v = Tensor::zeros(n_segments, m);
        for (k, &s) in segments.iter().enumerate() {
            let src = x.row_slice(k);
            for (o, y) in v.data_mut()[s * m..(s + 1) * m].iter_mut().zip(src) {
                *o += y;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::SegmentSum(a, segments), ng))
    }

    /// `[n x m] -> [n x 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sums: Vec<f64> = (0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect();
        let v = Tensor::column(&sums);
        let ng = self.ng(a);
        self.push(v, Op::SumRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::scalar(x.data().iter().sum::<f64>() / x.len().max(1) as f64);
        let ng = self.ng(a);
        self.push(v, Op::Mean(a), ng)
    }

    /// Dense layer `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != [1, 1] {
            return Err(Error::Argument(format!(
                "backward needs a scalar root, got {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let d = g.matmul_t(self.value(*b));
                        acc(&mut grads, *a, d);
                    }
                    if self.ng(*b) {
                        let d = self.value(*a).t_matmul(&g);
                        acc(&mut grads, *b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, hadamard(&g, self.value(*b)));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, hadamard(&g, self.value(*a)));
                    }
                }
                Op::AddBias(a, b) => {
                    if self.ng(*b) {
                        let m = g.cols();
                        let mut d = Tensor::zeros(1, m);
                        for (k, x) in g.data().iter().enumerate() {
                            d.data_mut()[k % m] += x;
                        }
                        acc(&mut grads, *b, d);
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::ScaleRows(a, s) => {
                    let x = self.value(*a);
                    let f = self.value(*s);
                    let m = x.cols();
                    if self.ng(*s) {
                        let d: Vec<f64> = (0..x.rows())
                            .map(|r| {
                                g.row_slice(r)
                                    .iter()
                                    .zip(x.row_slice(r))
                                    .map(|(p, q)| p * q)
                                    .sum()
                            })
                            .collect();
                        acc(&mut grads, *s, Tensor::column(&d));
                    }
                    if self.ng(*a) {
                        let mut d = g;
                        for (k, o) in d.data_mut().iter_mut().enumerate() {
                            *o *= f.data()[k / m.max(1)];
                        }
                        acc(&mut grads, *a, d);
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::Tanh(a) => {
                    let d = zip_map(&g, y, |gi, yi| gi * (1.0 - yi * yi));
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, y, |gi, yi| gi * yi * (1.0 - yi));
                    acc(&mut grads, *a, d);
                }
                Op::LeakyRelu(a, slope) => {
                    let d = zip_map(
                        &g,
                        self.value(*a),
                        |gi, xi| {
                            if xi > 0.0 {
                                gi
                            } else {
                                gi * slope
                            }
                        },
                    );
                    acc(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = zip_map(&g, self.value(*a), |gi, xi| 2.0 * xi * gi);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.ng(*p) {
                            let mut data = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                            }
                            acc(&mut grads, *p, Tensor::from_vec(rows, w, data)?);
                        }
                        offset += w;
                    }
                }
                Op::GatherRows(a, index) => {
                    let x = self.value(*a);
                    let m = x.cols();
                    let mut d = Tensor::zeros(x.rows(), m);
                    for (k, &src) in index.iter().enumerate() {
                        for (o, gi) in d.data_mut()[src * m..(src + 1) * m]
                            .iter_mut()
                            .zip(g.row_slice(k))
                        {
                            *o += gi;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SegmentSoftmax(a, segments) => {
                    let n_seg = segments.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_seg];
                    for (k, &s) in segments.iter().enumerate() {
                        dot[s] += y.data()[k] * g.data()[k];
                    }
                    let d: Vec<f64> = segments
                        .iter()
                        .enumerate()
                        .map(|(k, &s)| y.data()[k] * (g.data()[k] - dot[s]))
                        .collect();
                    acc(&mut grads, *a, Tensor::column(&d));
                }
                Op::SegmentSum(a, segments) => {
                    let m = g.cols();
                    let mut data = Vec::with_capacity(segments.len() * m);
                    for &s in segments.iter() {
                        data.extend_from_slice(g.row_slice(s));
                    }
                    acc(&mut grads, *a, Tensor::from_vec(segments.len(), m, data)?);
                }
                Op::SumRows(a) => {
                    let x = self.value(*a);
                    let m = x.cols();
                    let data = (0..x.len()).map(|k| g.data()[k / m.max(1)]).collect();
                    acc(&mut grads, *a, Tensor::from_vec(x.rows(), m, data)?);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(x.rows(), x.cols(), g.item()));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let v = g.item() / x.len().max(1) as f64;
                    acc(&mut grads, *a, Tensor::filled(x.rows(), x.cols(), v));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
