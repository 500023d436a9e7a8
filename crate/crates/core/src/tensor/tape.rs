//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one record to the [`Tape`] holding its output
//! value and the ids of its inputs. Records are only ever appended, so the
//! tape is always in topological order and [`Tape::backward`] is a single
//! reverse sweep that visits each record once.

use std::rc::Rc;

use super::array::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{GeoError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { a: Var, b: Var, axis: usize },
    SegmentSum { src: Var, ids: Rc<[usize]> },
    GatherRows { src: Var, idx: Rc<[usize]> },
    Silu(Var),
    Tanh(Var),
    Sqrt(Var),
    L2NormRows(Var),
    SumAll(Var),
    Reshape(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradients of a scalar with respect to every record on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn shape_err(op: &'static str, detail: String) -> GeoError {
    GeoError::ShapeMismatch { op, detail }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.records.push(Record { value, op });
        Var(self.records.len() - 1)
    }

    /// Records an input. Inputs and parameters are both leaves; whether a
    /// gradient is wanted is up to the caller.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.records[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = matmul(self.value(a), self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, format!("{sa:?} vs {sb:?}")));
        }
        let vals = self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::new(sa[0], sa[1], vals).expect("shape checked"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "hadamard", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(shape_err("add_row", format!("{sa:?} + {sr:?}")));
        }
        let r = self.value(row).values().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.values_mut().chunks_mut(sa[1].max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.values_mut().iter_mut().for_each(|x| *x *= c);
        self.push(out, Op::Scale(a, c))
    }

    /// Concatenation along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = match axis {
            0 => {
                if sa[1] != sb[1] {
                    return Err(shape_err("concat", format!("axis 0: {sa:?} and {sb:?}")));
                }
                let mut vals = self.value(a).values().to_vec();
                vals.extend_from_slice(self.value(b).values());
                Tensor::new(sa[0] + sb[0], sa[1], vals)?
            }
            1 => {
                if sa[0] != sb[0] {
                    return Err(shape_err("concat", format!("axis 1: {sa:?} and {sb:?}")));
                }
                let (va, vb) = (self.value(a), self.value(b));
                let mut vals = Vec::with_capacity(sa[0] * (sa[1] + sb[1]));
                for r in 0..sa[0] {
                    vals.extend_from_slice(va.row(r));
                    vals.extend_from_slice(vb.row(r));
                }
                Tensor::new(sa[0], sa[1] + sb[1], vals)?
            }
            _ => return Err(shape_err("concat", format!("axis {axis} out of range"))),
        };
        Ok(self.push(out, Op::Concat { a, b, axis }))
    }

    /// Sums rows of `src` that share a segment id into `num_segments` rows.
    pub fn segment_sum(&mut self, src: Var, ids: impl Into<Rc<[usize]>>, num_segments: usize) -> Result<Var> {
        let ids: Rc<[usize]> = ids.into();
        let [rows, cols] = self.shape(src);
        if ids.len() != rows {
            return Err(shape_err("segment_sum", format!("{} ids for {rows} rows", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= num_segments) {
            return Err(shape_err("segment_sum", format!("segment id {bad} >= {num_segments}")));
        }
        let mut out = Tensor::zeros(num_segments, cols);
        {
            let v = self.value(src).values();
            let o = out.values_mut();
            for (r, &s) in ids.iter().enumerate() {
                for c in 0..cols {
                    o[s * cols + c] += v[r * cols + c];
                }
            }
        }
        Ok(self.push(out, Op::SegmentSum { src, ids }))
    }

    /// Rows of `src` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, src: Var, idx: impl Into<Rc<[usize]>>) -> Result<Var> {
        let idx: Rc<[usize]> = idx.into();
        let [rows, cols] = self.shape(src);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        let v = self.value(src);
        let mut vals = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            vals.extend_from_slice(v.row(i));
        }
        let out = Tensor::new(idx.len(), cols, vals)?;
        Ok(self.push(out, Op::GatherRows { src, idx }))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.values_mut().iter_mut().for_each(|x| *x *= sigmoid(*x));
        self.push(out, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.values_mut().iter_mut().for_each(|x| *x = x.tanh());
        self.push(out, Op::Tanh(a))
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).values().iter().any(|&x| x < 0.0) {
            return Err(shape_err("sqrt", "negative input".into()));
        }
        let mut out = self.value(a).clone();
        out.values_mut().iter_mut().for_each(|x| *x = x.sqrt());
        Ok(self.push(out, Op::Sqrt(a)))
    }

    /// Euclidean norm of each row, `m × n → m × 1`.
    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let vals: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let out = Tensor::new(vals.len(), 1, vals).expect("column vector");
        self.push(out, Op::L2NormRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let [r, c] = self.shape(a);
        if r * c != rows * cols {
            return Err(shape_err("reshape", format!("[{r}, {c}] -> [{rows}, {cols}]")));
        }
        let out = self.value(a).clone().reshaped(rows, cols);
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Negative log-likelihood of `label` under `softmax(logits)` for a
    /// `1 × C` logit row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        if self.shape(logits)[0] != 1 {
            return Err(shape_err("softmax_cross_entropy", format!("expected one row, got {:?}", self.shape(logits))));
        }
        self.softmax_cross_entropy_mean(logits, &[label])
    }

    /// Mean cross-entropy over the rows of a `B × C` logit matrix.
    pub fn softmax_cross_entropy_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [r, c] = self.shape(logits);
        if r != labels.len() || r == 0 || labels.iter().any(|&l| l >= c) {
            return Err(shape_err("softmax_cross_entropy", format!("logits {r}x{c}, labels {labels:?}")));
        }
        let z = self.value(logits);
        let mut probs = Vec::with_capacity(r * c);
        let mut loss = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let z = z.row(row);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = z.iter().map(|x| (x - m).exp()).sum();
            probs.extend(z.iter().map(|x| (x - m).exp() / total));
            loss -= z[label] - m - total.ln();
        }
        let loss = loss / r as f64;
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = self.records.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let rec = &self.records[id];
            match &rec.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    let mut neg = g.clone();
                    neg.values_mut().iter_mut().for_each(|x| *x = -*x);
                    accumulate(&mut grads, *b, neg);
                }
                Op::AddRow(a, row) => {
                    let cols = g.cols();
                    let mut dr = vec![0.0; cols];
                    for chunk in g.values().chunks(cols.max(1)) {
                        for (d, x) in dr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, Tensor::new(1, cols, dr)?);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = g.clone();
                    da.values_mut().iter_mut().zip(vb.values()).for_each(|(x, y)| *x *= y);
                    let mut db = g.clone();
                    db.values_mut().iter_mut().zip(va.values()).for_each(|(x, y)| *x *= y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let mut da = g.clone();
                    da.values_mut().iter_mut().for_each(|x| *x *= c);
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat { a, b, axis } => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (da, db) = if *axis == 0 {
                        let split = sa[0] * sa[1];
                        (
                            Tensor::new(sa[0], sa[1], g.values()[..split].to_vec())?,
                            Tensor::new(sb[0], sb[1], g.values()[split..].to_vec())?,
                        )
                    } else {
                        let mut va = Vec::with_capacity(sa[0] * sa[1]);
                        let mut vb = Vec::with_capacity(sb[0] * sb[1]);
                        for r in 0..sa[0] {
                            let row = g.row(r);
                            va.extend_from_slice(&row[..sa[1]]);
                            vb.extend_from_slice(&row[sa[1]..]);
                        }
                        (Tensor::new(sa[0], sa[1], va)?, Tensor::new(sb[0], sb[1], vb)?)
                    };
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SegmentSum { src, ids } => {
                    let cols = g.cols();
                    let mut vals = Vec::with_capacity(ids.len() * cols);
                    for &s in ids.iter() {
                        vals.extend_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *src, Tensor::new(ids.len(), cols, vals)?);
                }
                Op::GatherRows { src, idx } => {
                    let [rows, cols] = self.shape(*src);
                    let mut d = Tensor::zeros(rows, cols);
                    {
                        let dv = d.values_mut();
                        for (r, &i) in idx.iter().enumerate() {
                            for c in 0..cols {
                                dv[i * cols + c] += g.values()[r * cols + c];
                            }
                        }
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::Silu(a) => {
                    let mut da = g.clone();
                    for (d, &x) in da.values_mut().iter_mut().zip(self.value(*a).values()) {
                        let s = sigmoid(x);
                        *d *= s * (1.0 + x * (1.0 - s));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let mut da = g.clone();
                    for (d, &y) in da.values_mut().iter_mut().zip(rec.value.values()) {
                        *d *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sqrt(a) => {
                    let mut da = g.clone();
                    for (d, &y) in da.values_mut().iter_mut().zip(rec.value.values()) {
                        *d = if y > 0.0 { *d * 0.5 / y } else { 0.0 };
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::L2NormRows(a) => {
                    let va = self.value(*a);
                    let cols = va.cols();
                    let mut da = Tensor::zeros(va.rows(), cols);
                    for r in 0..va.rows() {
                        let norm = rec.value.values()[r];
                        if norm > 0.0 {
                            let scale = g.values()[r] / norm;
                            for c in 0..cols {
                                da.values_mut()[r * cols + c] = scale * va.values()[r * cols + c];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let [r, c] = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::new(r, c, vec![g.item(); r * c])?);
                }
                Op::Reshape(a) => {
                    let [r, c] = self.shape(*a);
                    accumulate(&mut grads, *a, g.clone().reshaped(r, c));
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let mut d = probs.clone();
                    let c = d.len() / labels.len();
                    for (row, &l) in labels.iter().enumerate() {
                        d[row * c + l] -= 1.0;
                    }
                    let w = g.item() / labels.len() as f64;
                    d.iter_mut().for_each(|x| *x *= w);
                    accumulate(&mut grads, *logits, Tensor::new(labels.len(), c, d)?);
                }
            }
            grads[id] = Some(g);
        }
        let shapes = self.records.iter().map(|r| r.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
