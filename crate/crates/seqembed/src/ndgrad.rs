//! Dense-array computation tape with reverse-mode differentiation.
//!
//! Provides exactly the operations the sequence encoder and the metric
//! losses need. Every differentiable op records a backward rule on the
//! tape; [`Graph::backward`] replays the tape in reverse and accumulates
//! gradients into every reachable node.
//!
//! Production code instantiates the tape with `f32`; gradient-check tests
//! use `f64`, where central finite differences are reliable.

use std::fmt;

use num_traits::Float;
use thiserror::Error;

/// Element type bound for arrays and tape nodes.
pub trait Scalar: Float + fmt::Debug + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("index {index} out of bounds for table with {rows} rows")]
    IndexOutOfBounds { index: usize, rows: usize },
    #[error("batch_norm in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("{op} expects at least one input")]
    EmptyInput { op: &'static str },
}

/// Row-major dense 2-D array. Scalars are `(1, 1)`, row vectors `(1, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Array<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, v: F) -> Self {
        Array {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "array data length mismatch");
        Array { rows, cols, data }
    }

    pub fn scalar(v: F) -> Self {
        Array::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn scalar_value(&self) -> F {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn fill(&mut self, v: F) {
        self.data.fill(v);
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &x| acc + x)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self * other`, shapes `[m x k] * [k x n]`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Array::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other`, shapes `[k x m]ᵀ * [k x n]`.
    pub fn matmul_tn(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows);
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Array::zeros(m, n);
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                let o_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self * otherᵀ`, shapes `[m x k] * [n x k]ᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols);
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Array::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc = acc + a * b;
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    pub fn to_f64(&self) -> Array<f64> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.to_f64()).collect(),
        }
    }

    pub fn from_f64(src: &Array<f64>) -> Self {
        Array {
            rows: src.rows,
            cols: src.cols,
            data: src.data.iter().map(|&x| F::from_f64(x)).collect(),
        }
    }
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Backward rule: given parent values, the node value and the incoming
/// gradient, return one gradient contribution per parent.
type BackFn<F> = Box<dyn Fn(&[&Array<F>], &Array<F>, &Array<F>) -> Vec<Array<F>>>;

struct NodeEntry<F> {
    value: Array<F>,
    grad: Array<F>,
    parents: Vec<NodeId>,
    backward: Option<BackFn<F>>,
}

/// Batch-norm mode: train normalizes by batch statistics and reports
/// updated running stats; infer normalizes by the stored running stats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Computation tape. Confined to one thread for a forward/backward pass.
pub struct Graph<F: Scalar> {
    nodes: Vec<NodeEntry<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<F> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Array<F> {
        &self.nodes[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(F::zero());
        }
    }

    fn push(&mut self, value: Array<F>, parents: Vec<NodeId>, backward: Option<BackFn<F>>) -> NodeId {
        let grad = Array::zeros(value.rows(), value.cols());
        self.nodes.push(NodeEntry {
            value,
            grad,
            parents,
            backward,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a leaf (input or parameter) node.
    pub fn leaf(&mut self, value: Array<F>) -> NodeId {
        self.push(value, vec![], None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(GradError::ShapeMismatch {
                op: "add",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let out = av.zip_map(bv, |x, y| x + y);
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|_, _, g| vec![g.clone(), g.clone()])),
        ))
    }

    /// `a + bias` with `bias` a `[1 x n]` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(GradError::ShapeMismatch {
                op: "add_row",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + bv.get(0, c);
                out.set(r, c, v);
            }
        }
        Ok(self.push(
            out,
            vec![a, bias],
            Some(Box::new(|_, _, g| {
                let mut db = Array::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let v = db.get(0, c) + g.get(r, c);
                        db.set(0, c, v);
                    }
                }
                vec![g.clone(), db]
            })),
        ))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(GradError::ShapeMismatch {
                op: "mul_elem",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let out = av.zip_map(bv, |x, y| x * y);
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|pv, _, g| {
                vec![g.zip_map(pv[1], |gi, y| gi * y), g.zip_map(pv[0], |gi, x| gi * x)]
            })),
        ))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| F::one() / (F::one() + (-x).exp()));
        self.push(
            out,
            vec![a],
            Some(Box::new(|_, v, g| {
                vec![g.zip_map(v, |gi, s| gi * s * (F::one() - s))]
            })),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.tanh());
        self.push(
            out,
            vec![a],
            Some(Box::new(|_, v, g| {
                vec![g.zip_map(v, |gi, t| gi * (F::one() - t * t))]
            })),
        )
    }

    /// Elementwise `1 - x`.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| F::one() - x);
        self.push(
            out,
            vec![a],
            Some(Box::new(|_, _, g| vec![g.map(|gi| -gi)])),
        )
    }

    /// Elementwise `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, a: NodeId, scale: F, shift: F) -> NodeId {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |_, _, g| vec![g.map(|gi| gi * scale)])),
        )
    }

    /// Elementwise `max(0, x)`; subgradient 0 at the kink.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(
            out,
            vec![a],
            Some(Box::new(|pv, _, g| {
                vec![g.zip_map(pv[0], |gi, x| if x > F::zero() { gi } else { F::zero() })]
            })),
        )
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x * x);
        self.push(
            out,
            vec![a],
            Some(Box::new(|pv, _, g| {
                let two = F::from_f64(2.0);
                vec![g.zip_map(pv[0], |gi, x| gi * two * x)]
            })),
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let out = av.matmul(bv);
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|pv, _, g| {
                vec![g.matmul_nt(pv[1]), pv[0].matmul_tn(g)]
            })),
        ))
    }

    /// Column-wise concatenation of parts with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        if parts.is_empty() {
            return Err(GradError::EmptyInput { op: "concat_cols" });
        }
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(GradError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (rows, 0),
                    rhs: v.shape(),
                });
            }
            widths.push(v.cols());
            total += v.cols();
        }
        let mut out = Array::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                for c in 0..v.cols() {
                    out.set(r, offset + c, v.get(r, c));
                }
            }
            offset += v.cols();
        }
        Ok(self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |_, _, g| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &w in &widths {
                    let mut part = Array::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        for c in 0..w {
                            part.set(r, c, g.get(r, offset + c));
                        }
                    }
                    offset += w;
                    grads.push(part);
                }
                grads
            })),
        ))
    }

    /// Row-wise concatenation of parts with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        if parts.is_empty() {
            return Err(GradError::EmptyInput { op: "concat_rows" });
        }
        let cols = self.value(parts[0]).cols();
        let mut heights = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(GradError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: (0, cols),
                    rhs: v.shape(),
                });
            }
            heights.push(v.rows());
            total += v.rows();
        }
        let mut data = Vec::with_capacity(total * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Array::from_vec(total, cols, data);
        Ok(self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |_, _, g| {
                let mut grads = Vec::with_capacity(heights.len());
                let mut offset = 0;
                for &h in &heights {
                    let part = Array::from_vec(
                        h,
                        g.cols(),
                        g.data()[offset * g.cols()..(offset + h) * g.cols()].to_vec(),
                    );
                    offset += h;
                    grads.push(part);
                }
                grads
            })),
        ))
    }

    /// Contiguous row slice `[start, end)`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, GradError> {
        let v = self.value(a);
        if start >= end || end > v.rows() {
            return Err(GradError::IndexOutOfBounds {
                index: end,
                rows: v.rows(),
            });
        }
        let cols = v.cols();
        let out = Array::from_vec(end - start, cols, v.data()[start * cols..end * cols].to_vec());
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |pv, _, g| {
                let mut da = Array::zeros(pv[0].rows(), pv[0].cols());
                da.data_mut()[start * cols..end * cols].copy_from_slice(g.data());
                vec![da]
            })),
        ))
    }

    /// Embedding lookup: rows of `table` at `indices`; backward scatter-adds.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, GradError> {
        let t = self.value(table);
        let (rows, cols) = t.shape();
        for &i in indices {
            if i >= rows {
                return Err(GradError::IndexOutOfBounds { index: i, rows });
            }
        }
        let mut out = Array::zeros(indices.len(), cols);
        for (r, &i) in indices.iter().enumerate() {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(t.row(i));
        }
        let idx: Vec<usize> = indices.to_vec();
        Ok(self.push(
            out,
            vec![table],
            Some(Box::new(move |pv, _, g| {
                let mut dt = Array::zeros(pv[0].rows(), pv[0].cols());
                let cols = dt.cols();
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        let v = dt.get(i, c) + g.get(r, c);
                        dt.set(i, c, v);
                    }
                }
                vec![dt]
            })),
        ))
    }

    /// Batch normalization of a `[m x 1]` column with no learnable affine.
    ///
    /// Train mode normalizes by the batch mean and (biased) variance and
    /// returns the running statistics updated with `momentum`; infer mode
    /// normalizes by the stored statistics and returns `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        running_mean: F,
        running_var: F,
        mode: BnMode,
        eps: F,
        momentum: F,
    ) -> Result<(NodeId, Option<(F, F)>), GradError> {
        let v = self.value(x);
        if v.cols() != 1 {
            return Err(GradError::ShapeMismatch {
                op: "batch_norm",
                lhs: v.shape(),
                rhs: (v.rows(), 1),
            });
        }
        let m = v.rows();
        match mode {
            BnMode::Infer => {
                let denom = (running_var + eps).sqrt();
                let out = v.map(|x| (x - running_mean) / denom);
                let node = self.push(
                    out,
                    vec![x],
                    Some(Box::new(move |_, _, g| vec![g.map(|gi| gi / denom)])),
                );
                Ok((node, None))
            }
            BnMode::Train => {
                if m < 2 {
                    return Err(GradError::BatchTooSmall(m));
                }
                let mf = F::from_f64(m as f64);
                let mean = v.sum() / mf;
                let var = v
                    .data()
                    .iter()
                    .fold(F::zero(), |acc, &x| acc + (x - mean) * (x - mean))
                    / mf;
                let denom = (var + eps).sqrt();
                let xhat = v.map(|x| (x - mean) / denom);
                let new_mean = (F::one() - momentum) * running_mean + momentum * mean;
                let new_var = (F::one() - momentum) * running_var + momentum * var;
                let node = self.push(
                    xhat,
                    vec![x],
                    Some(Box::new(move |_, vhat, g| {
                        // dx_i = (1/(m*denom)) * (m*g_i - sum(g) - xhat_i * sum(g*xhat))
                        let sum_g = g.sum();
                        let sum_gx = g
                            .data()
                            .iter()
                            .zip(vhat.data())
                            .fold(F::zero(), |acc, (&gi, &xi)| acc + gi * xi);
                        let mf = F::from_f64(g.rows() as f64);
                        let mut dx = Array::zeros(g.rows(), 1);
                        for r in 0..g.rows() {
                            let gi = g.get(r, 0);
                            let xi = vhat.get(r, 0);
                            dx.set(r, 0, (mf * gi - sum_g - xi * sum_gx) / (mf * denom));
                        }
                        vec![dx]
                    })),
                );
                Ok((node, Some((new_mean, new_var))))
            }
        }
    }

    /// Row-wise L2 normalization: each row divided by `max(‖row‖, eps)`.
    pub fn l2_normalize(&mut self, a: NodeId, eps: F) -> NodeId {
        let v = self.value(a);
        let (rows, cols) = v.shape();
        let mut norms = Vec::with_capacity(rows);
        let mut out = Array::zeros(rows, cols);
        for r in 0..rows {
            let norm = v
                .row(r)
                .iter()
                .fold(F::zero(), |acc, &x| acc + x * x)
                .sqrt()
                .max(eps);
            norms.push(norm);
            for c in 0..cols {
                out.set(r, c, v.get(r, c) / norm);
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |pv, vout, g| {
                // d(x/n)/dx = I/n - x xᵀ / n³ = (I - y yᵀ)/n with y the output row
                let mut dx = Array::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let n = norms[r];
                    let dot = g
                        .row(r)
                        .iter()
                        .zip(vout.row(r))
                        .fold(F::zero(), |acc, (&gi, &yi)| acc + gi * yi);
                    for c in 0..g.cols() {
                        dx.set(r, c, (g.get(r, c) - vout.get(r, c) * dot) / n);
                    }
                }
                let _ = pv;
                vec![dx]
            })),
        )
    }

    /// Pairwise distances between unit-norm rows via the Gram trick:
    /// `D = sqrt(max(2 - 2 E Eᵀ, eps_d))` with the diagonal forced to 0.
    pub fn distance_matrix(&mut self, e: NodeId, eps_d: F) -> NodeId {
        let ev = self.value(e);
        let n = ev.rows();
        let gram = ev.matmul_nt(ev);
        let two = F::from_f64(2.0);
        let mut dist = Array::zeros(n, n);
        // clamp mask: gradient is zero where the eps floor was active
        let mut active = vec![true; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    dist.set(i, j, F::zero());
                    active[i * n + j] = false;
                    continue;
                }
                let s = two - two * gram.get(i, j);
                if s > eps_d {
                    dist.set(i, j, s.sqrt());
                } else {
                    dist.set(i, j, eps_d.sqrt());
                    active[i * n + j] = false;
                }
            }
        }
        self.push(
            dist,
            vec![e],
            Some(Box::new(move |pv, vout, g| {
                // dL/dG_ij = -g_ij / D_ij (off-diagonal, unclamped entries);
                // dL/dE = (dG + dGᵀ) E
                let e = pv[0];
                let n = vout.rows();
                let mut dg = Array::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        if active[i * n + j] {
                            dg.set(i, j, -g.get(i, j) / vout.get(i, j));
                        }
                    }
                }
                let mut de = Array::zeros(e.rows(), e.cols());
                for i in 0..n {
                    for j in 0..n {
                        let w = dg.get(i, j) + dg.get(j, i);
                        if w == F::zero() {
                            continue;
                        }
                        for c in 0..e.cols() {
                            let v = de.get(i, c) + w * e.get(j, c);
                            de.set(i, c, v);
                        }
                    }
                }
                vec![de]
            })),
        )
    }

    /// Gather entries `m[i, j]` into a `[p x 1]` column; backward scatter-adds.
    pub fn gather_entries(&mut self, m: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId, GradError> {
        let v = self.value(m);
        let (rows, cols) = v.shape();
        for &(i, j) in pairs {
            if i >= rows || j >= cols {
                return Err(GradError::IndexOutOfBounds {
                    index: i.max(j),
                    rows: rows.max(cols),
                });
            }
        }
        let data: Vec<F> = pairs.iter().map(|&(i, j)| v.get(i, j)).collect();
        let out = Array::from_vec(pairs.len(), 1, data);
        let pairs: Vec<(usize, usize)> = pairs.to_vec();
        Ok(self.push(
            out,
            vec![m],
            Some(Box::new(move |pv, _, g| {
                let mut dm = Array::zeros(pv[0].rows(), pv[0].cols());
                for (r, &(i, j)) in pairs.iter().enumerate() {
                    let v = dm.get(i, j) + g.get(r, 0);
                    dm.set(i, j, v);
                }
                vec![dm]
            })),
        ))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Array::scalar(self.value(a).sum());
        self.push(
            out,
            vec![a],
            Some(Box::new(|pv, _, g| {
                vec![Array::full(pv[0].rows(), pv[0].cols(), g.scalar_value())]
            })),
        )
    }

    /// Mean of all entries, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let count = F::from_f64((v.rows() * v.cols()) as f64);
        let out = Array::scalar(v.sum() / count);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |pv, _, g| {
                vec![Array::full(
                    pv[0].rows(),
                    pv[0].cols(),
                    g.scalar_value() / count,
                )]
            })),
        )
    }

    /// Reverse pass from a scalar loss. Gradients of every node reachable
    /// from `loss` are accumulated into the stored grads: repeated calls
    /// without [`Graph::zero_grads`] add up.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), GradError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(GradError::NonScalarLoss(lv.shape()));
        }
        // local per-call gradients, added into stored grads at the end
        let mut local: Vec<Option<Array<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        local[loss.0] = Some(Array::scalar(F::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if let Some(back) = &node.backward {
                let pvals: Vec<&Array<F>> = node.parents.iter().map(|p| &before[p.0].value).collect();
                let contribs = back(&pvals, &node.value, &g);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (p, c) in node.parents.iter().zip(contribs) {
                    match &mut local[p.0] {
                        Some(acc) => acc.add_assign(&c),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            self.nodes[i].grad.add_assign(&g);
        }
        Ok(())
    }
}
