//! Dense 64-bit tensors and a reverse-mode tape.
//!
//! Every learned quantity in the models lives in a [`Tensor`]. During a
//! forward pass the tensors are registered on a [`Tape`], which records each
//! primitive together with its operands. [`Tape::backward`] then walks the
//! records in exact reverse order and accumulates vector-Jacobian products.
//!
//! All matrix primitives work on row-major 2-D tensors. Scalars are tensors
//! of shape `[1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must be a nonempty list of positive sizes, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![n],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![m, n], data)
    }

    /// Column vector of shape `[n, 1]`.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![n, 1], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` of a 2-D tensor; 1-D tensors are single rows.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [m, n] => (*m, *n),
            _ => (1, self.data.len()),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (_, n) = self.dims2();
        self.data[row * n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let (_, n) = self.dims2();
        self.data[row * n + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, n) = self.dims2();
        &self.data[row * n..(row + 1) * n]
    }

    /// Stacks 2-D tensors with equal column counts on top of each other.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts
            .first()
            .map(|t| t.dims2().1)
            .ok_or_else(|| Error::Contract("vstack of zero tensors".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (m, n) = p.dims2();
            if n != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    left: vec![rows, cols],
                    right: p.shape.clone(),
                });
            }
            rows += m;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![rows, cols], data)
    }

    fn require_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: vec![],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Relu(Var),
    Tanh(Var),
    MaskedSoftmax(Var, Vec<bool>),
    ApplyMask(Var, Vec<bool>),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<f64>),
    SliceRows(Var, usize),
    Reshape(Var),
    OuterSum(Var, Var, usize),
    BlockMatMul(Var, Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Ordered record of primitives applied to tensors.
///
/// A tape is single-threaded. Independent training runs each own one.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` is not reachable from the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor {
                shape: shape.clone(),
                data: g.clone(),
                requires_grad: false,
            },
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }

    /// Node indices of the non-leaf records processed, in processing order.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded operation and intermediate value.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.nodes.shrink_to_fit();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers a tensor; it is tracked when `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad;
        self.push(t, Op::Leaf, tracked)
    }

    pub fn param(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = true;
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn unary(&mut self, x: Var, data: Vec<f64>, op: Op) -> Var {
        let shape = self.nodes[x.0].value.shape.clone();
        let tracked = self.tracked(x);
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: tracked,
            },
            op,
            tracked,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let (m, k) = ta.require_2d("matmul")?;
        let (k2, n) = tb.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ta.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
                requires_grad: tracked,
            },
            Op::MatMul(a, b),
            tracked,
        ))
    }

    /// Elementwise sum. `b` may match `a`, hold a single element, or be a
    /// `[1, n]` row broadcast over the rows of an `[m, n]` matrix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let mode = if ta.shape == tb.shape {
            Broadcast::Same
        } else if tb.is_scalar() {
            Broadcast::Scalar
        } else if ta.shape.len() == 2 && tb.shape.len() == 2 && tb.shape[0] == 1 && tb.shape[1] == ta.shape[1] {
            Broadcast::Row
        } else {
            return Err(Error::Shape {
                op: "add",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        };
        let data: Vec<f64> = match mode {
            Broadcast::Same => ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
            Broadcast::Scalar => {
                let s = tb.data[0];
                ta.data.iter().map(|x| x + s).collect()
            }
            Broadcast::Row => {
                let n = tb.data.len();
                ta.data
                    .iter()
                    .enumerate()
                    .map(|(idx, x)| x + tb.data[idx % n])
                    .collect()
            }
        };
        let shape = ta.shape.clone();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor {
                shape,
                data,
                requires_grad: tracked,
            },
            Op::Add(a, b, mode),
            tracked,
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("sub", a, b, |x, y| x - y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.binary_out(a, data, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("mul", a, b, |x, y| x * y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.binary_out(a, data, Op::Mul(a, b), tracked))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape != tb.shape {
            return Err(Error::Shape {
                op,
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        Ok(ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect())
    }

    fn binary_out(&mut self, like: Var, data: Vec<f64>, op: Op, tracked: bool) -> Var {
        let shape = self.nodes[like.0].value.shape.clone();
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: tracked,
            },
            op,
            tracked,
        )
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.nodes[x.0].value.data.iter().map(|v| v * factor).collect();
        self.unary(x, data, Op::Scale(x, factor))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Contract(format!("leaky_relu slope must lie in (0,1), got {slope}")));
        }
        let data = self.nodes[x.0]
            .value
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        Ok(self.unary(x, data, Op::LeakyRelu(x, slope)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.nodes[x.0].value.data.iter().map(|&v| v.max(0.0)).collect();
        self.unary(x, data, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.nodes[x.0].value.data.iter().map(|v| v.tanh()).collect();
        self.unary(x, data, Op::Tanh(x))
    }

    /// Row-wise softmax restricted to entries where `mask` is nonzero.
    ///
    /// Masked entries are exactly `0.0`; a row with no permitted entry is all zeros.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Tensor) -> Result<Var> {
        let ts = &self.nodes[scores.0].value;
        let (m, n) = ts.require_2d("masked_softmax")?;
        if mask.shape != ts.shape {
            return Err(Error::Shape {
                op: "masked_softmax",
                left: ts.shape.clone(),
                right: mask.shape.clone(),
            });
        }
        let keep: Vec<bool> = mask.data.iter().map(|&v| v != 0.0).collect();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ts.data[i * n..(i + 1) * n];
            let krow = &keep[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(krow)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if krow[j] {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    total += e;
                }
            }
            for j in 0..n {
                if krow[j] {
                    orow[j] /= total;
                }
            }
        }
        Ok(self.unary(scores, out, Op::MaskedSoftmax(scores, keep)))
    }

    /// Zeroes (exactly) every entry where `mask` is zero.
    pub fn apply_mask(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if mask.shape != tx.shape {
            return Err(Error::Shape {
                op: "apply_mask",
                left: tx.shape.clone(),
                right: mask.shape.clone(),
            });
        }
        let keep: Vec<bool> = mask.data.iter().map(|&v| v != 0.0).collect();
        let data = tx
            .data
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v } else { 0.0 })
            .collect();
        Ok(self.unary(x, data, Op::ApplyMask(x, keep)))
    }

    /// Concatenates 2-D tensors with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let m = self.nodes[first.0].value.require_2d("concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = &self.nodes[p.0].value;
            let (rows, cols) = t.require_2d("concat")?;
            if rows != m {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.nodes[first.0].value.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor {
                shape: vec![m, total],
                data,
                requires_grad: tracked,
            },
            Op::Concat(parts.to_vec()),
            tracked,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.reduce(x, s, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data.iter().sum::<f64>() / t.data.len() as f64;
        self.reduce(x, s, Op::Mean(x))
    }

    fn reduce(&mut self, x: Var, value: f64, op: Op) -> Var {
        let tracked = self.tracked(x);
        self.push(
            Tensor {
                shape: vec![1],
                data: vec![value],
                requires_grad: tracked,
            },
            op,
            tracked,
        )
    }

    /// Inverted dropout. Identity when `p == 0` or outside training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train_mode: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability must lie in [0,1), got {p}")));
        }
        if p == 0.0 || !train_mode {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.nodes[x.0].value.numel();
        let multipliers: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let data = self.nodes[x.0]
            .value
            .data
            .iter()
            .zip(&multipliers)
            .map(|(v, m)| v * m)
            .collect();
        Ok(self.unary(x, data, Op::Dropout(x, multipliers)))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != t.numel() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                left: t.shape.clone(),
                right: shape.to_vec(),
            });
        }
        let data = t.data.clone();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor {
                shape: shape.to_vec(),
                data,
                requires_grad: tracked,
            },
            Op::Reshape(x),
            tracked,
        ))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (m, n) = t.require_2d("slice_rows")?;
        if start >= end || end > m {
            return Err(Error::Contract(format!("row slice {start}..{end} out of range for {m} rows")));
        }
        let data = t.data[start * n..end * n].to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor {
                shape: vec![end - start, n],
                data,
                requires_grad: tracked,
            },
            Op::SliceRows(x, start),
            tracked,
        ))
    }

    /// Pairwise score matrix for a stack of equally sized graphs.
    ///
    /// `target` and `source` are `[B*n, 1]` columns; the result is `[B*n, n]`
    /// with entry `(b*n + i, j) = target[b*n + i] + source[b*n + j]`.
    pub fn outer_sum(&mut self, target: Var, source: Var, block: usize) -> Result<Var> {
        let tt = &self.nodes[target.0].value;
        let ts = &self.nodes[source.0].value;
        let (m, c1) = tt.require_2d("outer_sum")?;
        let (m2, c2) = ts.require_2d("outer_sum")?;
        if m != m2 || c1 != 1 || c2 != 1 || block == 0 || m % block != 0 {
            return Err(Error::Shape {
                op: "outer_sum",
                left: tt.shape.clone(),
                right: ts.shape.clone(),
            });
        }
        let mut data = vec![0.0; m * block];
        for r in 0..m {
            let base = (r / block) * block;
            for j in 0..block {
                data[r * block + j] = tt.data[r] + ts.data[base + j];
            }
        }
        let tracked = self.tracked(target) || self.tracked(source);
        Ok(self.push(
            Tensor {
                shape: vec![m, block],
                data,
                requires_grad: tracked,
            },
            Op::OuterSum(target, source, block),
            tracked,
        ))
    }

    /// Per-graph aggregation for stacked graphs: row `b*n + i` of the result
    /// is `sum_j weights[b*n + i, j] * values[b*n + j, :]`.
    pub fn block_matmul(&mut self, weights: Var, values: Var, block: usize) -> Result<Var> {
        let tw = &self.nodes[weights.0].value;
        let tv = &self.nodes[values.0].value;
        let (m, n) = tw.require_2d("block_matmul")?;
        let (m2, d) = tv.require_2d("block_matmul")?;
        if m != m2 || n != block || block == 0 || m % block != 0 {
            return Err(Error::Shape {
                op: "block_matmul",
                left: tw.shape.clone(),
                right: tv.shape.clone(),
            });
        }
        let mut data = vec![0.0; m * d];
        for r in 0..m {
            let base = (r / block) * block;
            let orow = &mut data[r * d..(r + 1) * d];
            for j in 0..block {
                let w = tw.data[r * block + j];
                if w == 0.0 {
                    continue;
                }
                let vrow = &tv.data[(base + j) * d..(base + j + 1) * d];
                for (o, &v) in orow.iter_mut().zip(vrow) {
                    *o += w * v;
                }
            }
        }
        let tracked = self.tracked(weights) || self.tracked(values);
        Ok(self.push(
            Tensor {
                shape: vec![m, d],
                data,
                requires_grad: tracked,
            },
            Op::BlockMatMul(weights, values, block),
            tracked,
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut visited = Vec::new();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b, mode) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| match mode {
                    Broadcast::Same => add_into(gb, g),
                    Broadcast::Scalar => gb[0] += g.iter().sum::<f64>(),
                    Broadcast::Row => {
                        let n = gb.len();
                        for (idx, &v) in g.iter().enumerate() {
                            gb[idx % n] += v;
                        }
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let ta = &self.nodes[a.0].value.data;
                let tb = &self.nodes[b.0].value.data;
                self.accumulate(grads, *a, |ga| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(tb) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(ta) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(x, factor) => self.accumulate(grads, *x, |gx| {
                for (o, v) in gx.iter_mut().zip(g) {
                    *o += v * factor;
                }
            }),
            Op::LeakyRelu(x, slope) => {
                let tx = &self.nodes[x.0].value.data;
                self.accumulate(grads, *x, |gx| {
                    for ((o, gv), &xv) in gx.iter_mut().zip(g).zip(tx) {
                        *o += if xv >= 0.0 { *gv } else { gv * slope };
                    }
                });
            }
            Op::Relu(x) => {
                let tx = &self.nodes[x.0].value.data;
                self.accumulate(grads, *x, |gx| {
                    for ((o, gv), &xv) in gx.iter_mut().zip(g).zip(tx) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value.data;
                self.accumulate(grads, *x, |gx| {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::MaskedSoftmax(x, keep) => {
                let y = &node.value.data;
                let n = node.value.dims2().1;
                self.accumulate(grads, *x, |gx| {
                    for (i, yrow) in y.chunks(n).enumerate() {
                        let grow = &g[i * n..(i + 1) * n];
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            if keep[i * n + j] {
                                gx[i * n + j] += yrow[j] * (grow[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::ApplyMask(x, keep) => self.accumulate(grads, *x, |gx| {
                for ((o, gv), &k) in gx.iter_mut().zip(g).zip(keep) {
                    if k {
                        *o += gv;
                    }
                }
            }),
            Op::Concat(parts) => {
                let total = node.value.dims2().1;
                let m = node.value.dims2().0;
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.dims2().1;
                    self.accumulate(grads, *p, |gp| {
                        for i in 0..m {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Sum(x) => self.accumulate(grads, *x, |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(x) => self.accumulate(grads, *x, |gx| {
                let share = g[0] / gx.len() as f64;
                for o in gx.iter_mut() {
                    *o += share;
                }
            }),
            Op::Dropout(x, mult) => self.accumulate(grads, *x, |gx| {
                for ((o, gv), m) in gx.iter_mut().zip(g).zip(mult) {
                    *o += gv * m;
                }
            }),
            Op::SliceRows(x, start) => {
                let n = node.value.dims2().1;
                let offset = start * n;
                self.accumulate(grads, *x, |gx| add_into(&mut gx[offset..offset + g.len()], g));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |gx| add_into(gx, g)),
            Op::OuterSum(target, source, block) => {
                let block = *block;
                self.accumulate(grads, *target, |gt| {
                    for (r, o) in gt.iter_mut().enumerate() {
                        *o += g[r * block..(r + 1) * block].iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, *source, |gs| {
                    let m = gs.len();
                    for r in 0..m {
                        let base = (r / block) * block;
                        for j in 0..block {
                            gs[base + j] += g[r * block + j];
                        }
                    }
                });
            }
            Op::BlockMatMul(weights, values, block) => {
                let block = *block;
                let tw = &self.nodes[weights.0].value.data;
                let tv = &self.nodes[values.0].value.data;
                let d = node.value.dims2().1;
                let m = node.value.dims2().0;
                self.accumulate(grads, *weights, |gw| {
                    for r in 0..m {
                        let base = (r / block) * block;
                        let grow = &g[r * d..(r + 1) * d];
                        for j in 0..block {
                            let vrow = &tv[(base + j) * d..(base + j + 1) * d];
                            gw[r * block + j] += grow.iter().zip(vrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *values, |gv| {
                    for r in 0..m {
                        let base = (r / block) * block;
                        let grow = &g[r * d..(r + 1) * d];
                        for j in 0..block {
                            let w = tw[r * block + j];
                            if w == 0.0 {
                                continue;
                            }
                            for (o, &gg) in gv[(base + j) * d..(base + j + 1) * d].iter_mut().zip(grow) {
                                *o += w * gg;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let b = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let out = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(mat(&[&[1.0, 2.0]]));
        let c = tape.constant(mat(&[&[3.0], &[4.0]]));
        let out = tape.matmul(a, c).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
        assert_eq!(tape.value(out).shape(), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -0.2]);
        let z = tape.constant(Tensor::scalar(0.0));
        let y = tape.leaky_relu(z, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
        assert!(tape.leaky_relu(z, 1.5).is_err());
    }

    #[test]
    fn leaky_relu_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2], vec![-3.0, 5.0]).unwrap());
        let y = tape.leaky_relu(x, 0.2).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[0.2, 1.0]);
    }

    #[test]
    fn masked_softmax_cases() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[2, 2]));
        let y = tape.masked_softmax(s, &Tensor::ones(&[2, 2])).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);

        let s = tape.constant(mat(&[&[7.0, -3.0]]));
        let y = tape.masked_softmax(s, &mat(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

        let s = tape.constant(mat(&[&[1.0, 2.0, 3.0]]));
        let y = tape.masked_softmax(s, &Tensor::ones(&[1, 3])).unwrap();
        // direct exp-normalisation
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (got, v) in tape.value(y).data().iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((got - v.exp() / z).abs() < 1e-12);
        }
        let expected = [0.0900, 0.2447, 0.6652];
        for (got, want) in tape.value(y).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn masked_softmax_empty_row_is_zero() {
        let mut tape = Tape::new();
        let s = tape.param(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let y = tape.masked_softmax(s, &mat(&[&[0.0, 0.0], &[1.0, 1.0]])).unwrap();
        assert_eq!(&tape.value(y).data()[..2], &[0.0, 0.0]);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert!(g.get(s).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tanh_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![0.0, 1e6]).unwrap());
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).data()[0], 0.0);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-12);

        let x = tape.param(Tensor::scalar(0.5));
        let y = tape.tanh(x);
        let g = tape.backward(y).unwrap();
        assert!((g.get(x).data()[0] - 0.7864).abs() < 1e-4);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.sum(w);
        assert_eq!(tape.backward(s).unwrap().get(w).data(), &[1.0, 1.0, 1.0]);

        let w = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        assert_eq!(tape.backward(s).unwrap().get(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.param(Tensor::ones(&[2]));
        let unused = tape.param(Tensor::ones(&[3]));
        let s = tape.sum(used);
        let g = tape.backward(s).unwrap();
        assert!(!g.is_reachable(unused));
        assert_eq!(g.get(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2, 2]));
        let a = tape.tanh(x);
        let b = tape.scale(a, 3.0);
        let c = tape.mul(a, b).unwrap();
        let d = tape.sum(c);
        let g = tape.backward(d).unwrap();
        let order = g.visit_order();
        assert_eq!(order, &[d.index(), c.index(), b.index(), a.index()]);
        assert!(order.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn clear_frees_records() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[4]));
        let _ = tape.sum(x);
        assert_eq!(tape.len(), 2);
        tape.clear();
        assert!(tape.is_empty());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[3, 3]));
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.9, false, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn add_broadcasts_scalar_and_row() {
        let mut tape = Tape::new();
        let a = tape.param(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let s = tape.param(Tensor::scalar(10.0));
        let r = tape.param(mat(&[&[1.0, -1.0]]));
        let y = tape.add(a, s).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 12.0, 13.0, 14.0]);
        let z = tape.add(y, r).unwrap();
        assert_eq!(tape.value(z).data(), &[12.0, 11.0, 14.0, 13.0]);
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(s).data(), &[4.0]);
        assert_eq!(g.get(r).data(), &[2.0, 2.0]);
        let bad = tape.param(Tensor::zeros(&[3]));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn block_ops_match_per_block_products() {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::column(vec![1.0, 2.0, 10.0, 20.0]).unwrap());
        let s = tape.constant(Tensor::column(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let e = tape.outer_sum(t, s, 2).unwrap();
        assert_eq!(tape.value(e).shape(), &[4, 2]);
        assert_eq!(tape.value(e).data(), &[1.1, 1.2, 2.1, 2.2, 10.3, 10.4, 20.3, 20.4]);

        let w = tape.constant(mat(&[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0], &[2.0, 0.0]]));
        let v = tape.constant(mat(&[&[1.0], &[3.0], &[5.0], &[7.0]]));
        let out = tape.block_matmul(w, v, 2).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 7.0, 10.0]);
    }
}
