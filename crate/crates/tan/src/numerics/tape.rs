//! Record of applied operations with reverse-mode gradient computation.
//!
//! A [`Tape`] owns every tensor produced during a forward computation.
//! Builder methods validate shapes, evaluate the primitive eagerly, and
//! append the operation to the record; [`Tape::backward`] replays the
//! record in reverse, accumulating vector-Jacobian products. Operations are
//! topologically ordered by construction because an input id must exist
//! before it can be consumed.

use super::functions::{self, guarded_norm};
use super::tensor::{Scalar, Tensor, TensorError};

/// Identity of a tensor held by a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    /// y[n] = Σ_m x[m]·W[m,n] — weights stored input-major.
    VecMat { x: ValueId, w: ValueId, out: ValueId },
    /// C[m,n] = Σ_k A[m,k]·B[k,n]
    MatMul { a: ValueId, b: ValueId, out: ValueId },
    Transpose { a: ValueId, out: ValueId },
    /// Rank-1 view of one matrix row.
    Row { a: ValueId, index: usize, out: ValueId },
    /// Matrix assembled from equal-length rank-1 rows.
    StackRows { parts: Vec<ValueId>, out: ValueId },
    /// Rank-1 concatenation.
    Concat { parts: Vec<ValueId>, out: ValueId },
    Add { a: ValueId, b: ValueId, out: ValueId },
    Sub { a: ValueId, b: ValueId, out: ValueId },
    Mul { a: ValueId, b: ValueId, out: ValueId },
    Scale { a: ValueId, factor: T, out: ValueId },
    Sigmoid { a: ValueId, out: ValueId },
    Tanh { a: ValueId, out: ValueId },
    Relu { a: ValueId, out: ValueId },
    Squash { a: ValueId, out: ValueId },
    /// Per-row masked softmax of a k×n matrix; the mask selects columns.
    MaskedSoftmaxRows { a: ValueId, mask: Vec<bool>, out: ValueId },
    RowNormalize { a: ValueId, out: ValueId },
    /// Euclidean norm of all elements (Frobenius for matrices).
    Norm { a: ValueId, out: ValueId },
    Sum { a: ValueId, out: ValueId },
    Mse { pred: ValueId, target: ValueId, out: ValueId },
    /// Inverted dropout: kept coordinates scaled by 1/(1−rate).
    Dropout {
        a: ValueId,
        mask: Vec<bool>,
        keep_scale: T,
        out: ValueId,
    },
    /// out[i,:] = table[ids[i],:]
    Gather {
        table: ValueId,
        ids: Vec<usize>,
        out: ValueId,
    },
}

/// Gradient of a scalar loss with respect to every tensor on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`; zero if the loss does not reach it.
    pub fn get(&self, id: ValueId) -> Tensor<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn reached(&self, id: ValueId) -> bool {
        self.grads[id.0].is_some()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Registers a leaf tensor (an input or a parameter snapshot).
    pub fn input(&mut self, t: Tensor<T>) -> ValueId {
        self.push(t)
    }

    /// Registers a parameter by value; the tape owns a snapshot, so later
    /// mutation of the source cannot affect this computation.
    pub fn param(&mut self, t: &Tensor<T>) -> ValueId {
        self.push(t.clone())
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, t: Tensor<T>) -> ValueId {
        debug_assert!(t.all_finite(), "non-finite tensor entered the tape");
        let id = ValueId(self.values.len());
        self.values.push(t);
        id
    }

    fn shape(&self, id: ValueId) -> &[usize] {
        self.values[id.0].shape()
    }

    fn require_rank1(&self, id: ValueId, op: &'static str) -> Result<usize, TensorError> {
        match self.shape(id) {
            [n] => Ok(*n),
            other => Err(TensorError::RankMismatch {
                op,
                got: other.to_vec(),
            }),
        }
    }

    fn require_rank2(&self, id: ValueId, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape(id) {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::RankMismatch {
                op,
                got: other.to_vec(),
            }),
        }
    }

    fn require_same_shape(
        &self,
        a: ValueId,
        b: ValueId,
        op: &'static str,
    ) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ── Recorded operations ──────────────────────────────────────────

    /// y = xᵀW for W of shape in×out.
    pub fn vec_mat(&mut self, x: ValueId, w: ValueId) -> Result<ValueId, TensorError> {
        let m = self.require_rank1(x, "vec_mat")?;
        let (wr, wc) = self.require_rank2(w, "vec_mat")?;
        if m != wr {
            return Err(TensorError::ShapeMismatch {
                op: "vec_mat",
                left: vec![m],
                right: vec![wr, wc],
            });
        }
        let xv = self.values[x.0].data();
        let wv = self.values[w.0].data();
        let mut out = vec![T::zero(); wc];
        for i in 0..m {
            let xi = xv[i];
            for j in 0..wc {
                out[j] = out[j] + xi * wv[i * wc + j];
            }
        }
        let out = self.push(Tensor::vector(out));
        self.ops.push(Op::VecMat { x, w, out });
        Ok(out)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (m, ka) = self.require_rank2(a, "matmul")?;
        let (kb, n) = self.require_rank2(b, "matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, ka],
                right: vec![kb, n],
            });
        }
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for k in 0..ka {
                let aik = av[i * ka + k];
                for j in 0..n {
                    out[i * n + j] = out[i * n + j] + aik * bv[k * n + j];
                }
            }
        }
        let out = self.push(Tensor::matrix(m, n, out)?);
        self.ops.push(Op::MatMul { a, b, out });
        Ok(out)
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId, TensorError> {
        let (r, c) = self.require_rank2(a, "transpose")?;
        let av = self.values[a.0].data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let out = self.push(Tensor::matrix(c, r, out)?);
        self.ops.push(Op::Transpose { a, out });
        Ok(out)
    }

    pub fn row(&mut self, a: ValueId, index: usize) -> Result<ValueId, TensorError> {
        let (r, _) = self.require_rank2(a, "row")?;
        if index >= r {
            return Err(TensorError::IndexOutOfBounds { index, len: r });
        }
        let data = self.values[a.0].row(index).to_vec();
        let out = self.push(Tensor::vector(data));
        self.ops.push(Op::Row { a, index, out });
        Ok(out)
    }

    pub fn stack_rows(&mut self, parts: &[ValueId]) -> Result<ValueId, TensorError> {
        assert!(!parts.is_empty(), "stack_rows of nothing");
        let cols = self.require_rank1(parts[0], "stack_rows")?;
        let mut data = Vec::with_capacity(parts.len() * cols);
        for &p in parts {
            let len = self.require_rank1(p, "stack_rows")?;
            if len != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    left: vec![cols],
                    right: vec![len],
                });
            }
            data.extend_from_slice(self.values[p.0].data());
        }
        let out = self.push(Tensor::matrix(parts.len(), cols, data)?);
        self.ops.push(Op::StackRows {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId, TensorError> {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        for &p in parts {
            self.require_rank1(p, "concat")?;
            data.extend_from_slice(self.values[p.0].data());
        }
        let out = self.push(Tensor::vector(data));
        self.ops.push(Op::Concat {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.require_same_shape(a, b, "add")?;
        let data: Vec<T> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.require_same_shape(a, b, "sub")?;
        let data: Vec<T> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.require_same_shape(a, b, "mul")?;
        let data: Vec<T> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: ValueId, factor: T) -> ValueId {
        let data: Vec<T> = self.values[a.0].data().iter().map(|&x| factor * x).collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Scale { a, factor, out });
        out
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let data: Vec<T> = self.values[a.0]
            .data()
            .iter()
            .map(|&x| functions::sigmoid(x))
            .collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Sigmoid { a, out });
        out
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let data: Vec<T> = self.values[a.0].data().iter().map(|&x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Tanh { a, out });
        out
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let data: Vec<T> = self.values[a.0]
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Relu { a, out });
        out
    }

    pub fn squash(&mut self, a: ValueId) -> Result<ValueId, TensorError> {
        self.require_rank1(a, "squash")?;
        let data = functions::squash(self.values[a.0].data());
        let out = self.push(Tensor::vector(data));
        self.ops.push(Op::Squash { a, out });
        Ok(out)
    }

    pub fn masked_softmax_rows(
        &mut self,
        a: ValueId,
        mask: &[bool],
    ) -> Result<ValueId, TensorError> {
        let (rows, cols) = self.require_rank2(a, "masked_softmax_rows")?;
        if mask.len() != cols {
            return Err(TensorError::MaskLength {
                scores: cols,
                mask: mask.len(),
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(functions::masked_softmax(self.values[a.0].row(r), mask)?);
        }
        let out = self.push(Tensor::matrix(rows, cols, data)?);
        self.ops.push(Op::MaskedSoftmaxRows {
            a,
            mask: mask.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn row_normalize(&mut self, a: ValueId) -> Result<ValueId, TensorError> {
        let normalized = functions::row_normalized(&self.values[a.0])?;
        let out = self.push(normalized);
        self.ops.push(Op::RowNormalize { a, out });
        Ok(out)
    }

    /// Exact Euclidean norm; the derivative denominator is guarded so the
    /// gradient stays finite at the origin.
    pub fn norm(&mut self, a: ValueId) -> ValueId {
        let out = self.push(Tensor::scalar(self.values[a.0].norm()));
        self.ops.push(Op::Norm { a, out });
        out
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let total: T = self.values[a.0].data().iter().copied().sum();
        let out = self.push(Tensor::scalar(total));
        self.ops.push(Op::Sum { a, out });
        out
    }

    pub fn mse(&mut self, pred: ValueId, target: ValueId) -> Result<ValueId, TensorError> {
        self.require_same_shape(pred, target, "mse_loss")?;
        let loss = functions::mse_loss(self.values[pred.0].data(), self.values[target.0].data())?;
        let out = self.push(Tensor::scalar(loss));
        self.ops.push(Op::Mse { pred, target, out });
        Ok(out)
    }

    /// Inverted dropout with an explicit keep mask (randomness stays with
    /// the caller). `rate` only determines the rescaling of kept values.
    pub fn dropout(&mut self, a: ValueId, mask: &[bool], rate: f64) -> Result<ValueId, TensorError> {
        let numel = self.values[a.0].numel();
        if mask.len() != numel {
            return Err(TensorError::MaskLength {
                scores: numel,
                mask: mask.len(),
            });
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - rate));
        let data: Vec<T> = self.values[a.0]
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &keep)| if keep { x * keep_scale } else { T::zero() })
            .collect();
        let shape = self.shape(a).to_vec();
        let out = self.push(Tensor::new(shape, data).expect("shape preserved"));
        self.ops.push(Op::Dropout {
            a,
            mask: mask.to_vec(),
            keep_scale,
            out,
        });
        Ok(out)
    }

    pub fn gather(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId, TensorError> {
        let (rows, cols) = self.require_rank2(table, "gather")?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(TensorError::IndexOutOfBounds { index: i, len: rows });
            }
            data.extend_from_slice(self.values[table.0].row(i));
        }
        let out = self.push(Tensor::matrix(ids.len(), cols, data)?);
        self.ops.push(Op::Gather {
            table,
            ids: ids.to_vec(),
            out,
        });
        Ok(out)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// tensor on the tape. Tensors the loss does not reach get zero.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<T>, TensorError> {
        if self.values[loss.0].numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                numel: self.values[loss.0].numel(),
            });
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; self.values.len()];
        adj[loss.0] = Some(vec![T::one()]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut adj);
        }

        let shapes = self.values.iter().map(|v| v.shape().to_vec()).collect();
        let grads = adj
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.values[i].shape().to_vec(), data)
                        .expect("adjoint shape mirrors value shape")
                })
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_op(&self, op: &Op<T>, adj: &mut [Option<Vec<T>>]) {
        fn acc<T: Scalar>(adj: &mut [Option<Vec<T>>], id: ValueId, delta: impl Fn(&mut [T])) {
            let slot = &mut adj[id.0];
            match slot {
                Some(g) => delta(g),
                None => unreachable!("accumulator initialized before use"),
            }
        }
        // Ensures an accumulator exists before adding into it.
        fn ensure<T: Scalar>(adj: &mut [Option<Vec<T>>], id: ValueId, len: usize) {
            if adj[id.0].is_none() {
                adj[id.0] = Some(vec![T::zero(); len]);
            }
        }

        macro_rules! take_out {
            ($out:expr) => {
                match &adj[$out.0] {
                    Some(g) => g.clone(),
                    None => return,
                }
            };
        }

        match op {
            Op::VecMat { x, w, out } => {
                let d_out = take_out!(out);
                let xv = self.values[x.0].data();
                let wv = self.values[w.0].data();
                let (m, n) = (xv.len(), d_out.len());
                ensure(adj, *x, m);
                acc(adj, *x, |g| {
                    for i in 0..m {
                        let mut s = T::zero();
                        for j in 0..n {
                            s = s + d_out[j] * wv[i * n + j];
                        }
                        g[i] = g[i] + s;
                    }
                });
                ensure(adj, *w, m * n);
                acc(adj, *w, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] = g[i * n + j] + xv[i] * d_out[j];
                        }
                    }
                });
            }
            Op::MatMul { a, b, out } => {
                let d_out = take_out!(out);
                let av = self.values[a.0].data();
                let bv = self.values[b.0].data();
                let (m, k) = (self.values[a.0].rows(), self.values[a.0].cols());
                let n = self.values[b.0].cols();
                // d_A = d_out · Bᵀ
                ensure(adj, *a, m * k);
                acc(adj, *a, |g| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for j in 0..n {
                                s = s + d_out[i * n + j] * bv[p * n + j];
                            }
                            g[i * k + p] = g[i * k + p] + s;
                        }
                    }
                });
                // d_B = Aᵀ · d_out
                ensure(adj, *b, k * n);
                acc(adj, *b, |g| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = T::zero();
                            for i in 0..m {
                                s = s + av[i * k + p] * d_out[i * n + j];
                            }
                            g[p * n + j] = g[p * n + j] + s;
                        }
                    }
                });
            }
            Op::Transpose { a, out } => {
                let d_out = take_out!(out);
                let (r, c) = (self.values[a.0].rows(), self.values[a.0].cols());
                ensure(adj, *a, r * c);
                acc(adj, *a, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] = g[i * c + j] + d_out[j * r + i];
                        }
                    }
                });
            }
            Op::Row { a, index, out } => {
                let d_out = take_out!(out);
                let cols = self.values[a.0].cols();
                ensure(adj, *a, self.values[a.0].numel());
                acc(adj, *a, |g| {
                    for j in 0..cols {
                        g[index * cols + j] = g[index * cols + j] + d_out[j];
                    }
                });
            }
            Op::StackRows { parts, out } => {
                let d_out = take_out!(out);
                let cols = self.values[out.0].cols();
                for (r, &p) in parts.iter().enumerate() {
                    ensure(adj, p, cols);
                    acc(adj, p, |g| {
                        for j in 0..cols {
                            g[j] = g[j] + d_out[r * cols + j];
                        }
                    });
                }
            }
            Op::Concat { parts, out } => {
                let d_out = take_out!(out);
                let mut offset = 0;
                for &p in parts {
                    let len = self.values[p.0].numel();
                    ensure(adj, p, len);
                    acc(adj, p, |g| {
                        for j in 0..len {
                            g[j] = g[j] + d_out[offset + j];
                        }
                    });
                    offset += len;
                }
            }
            Op::Add { a, b, out } => {
                let d_out = take_out!(out);
                for &id in [a, b] {
                    ensure(adj, id, d_out.len());
                    acc(adj, id, |g| {
                        for (gi, di) in g.iter_mut().zip(&d_out) {
                            *gi = *gi + *di;
                        }
                    });
                }
            }
            Op::Sub { a, b, out } => {
                let d_out = take_out!(out);
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for (gi, di) in g.iter_mut().zip(&d_out) {
                        *gi = *gi + *di;
                    }
                });
                ensure(adj, *b, d_out.len());
                acc(adj, *b, |g| {
                    for (gi, di) in g.iter_mut().zip(&d_out) {
                        *gi = *gi - *di;
                    }
                });
            }
            Op::Mul { a, b, out } => {
                let d_out = take_out!(out);
                let av = self.values[a.0].data();
                let bv = self.values[b.0].data();
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * bv[i];
                    }
                });
                ensure(adj, *b, d_out.len());
                acc(adj, *b, |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * av[i];
                    }
                });
            }
            Op::Scale { a, factor, out } => {
                let d_out = take_out!(out);
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for (gi, di) in g.iter_mut().zip(&d_out) {
                        *gi = *gi + *factor * *di;
                    }
                });
            }
            Op::Sigmoid { a, out } => {
                let d_out = take_out!(out);
                let ov = self.values[out.0].data();
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * ov[i] * (T::one() - ov[i]);
                    }
                });
            }
            Op::Tanh { a, out } => {
                let d_out = take_out!(out);
                let ov = self.values[out.0].data();
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * (T::one() - ov[i] * ov[i]);
                    }
                });
            }
            Op::Relu { a, out } => {
                let d_out = take_out!(out);
                let av = self.values[a.0].data();
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for i in 0..d_out.len() {
                        if av[i] > T::zero() {
                            g[i] = g[i] + d_out[i];
                        }
                    }
                });
            }
            Op::Squash { a, out } => {
                let d_out = take_out!(out);
                let v = self.values[a.0].data();
                // out = f(n)·v with n = sqrt(Σv² + g), f = n/(1+n²):
                // d_v = f·d_out + (f'(n)/n)(d_out·v)·v, f' = (1−n²)/(1+n²)².
                let n = guarded_norm(v);
                let f = n / (T::one() + n * n);
                let fp = (T::one() - n * n) / ((T::one() + n * n) * (T::one() + n * n));
                let dot: T = d_out.iter().zip(v).map(|(&d, &x)| d * x).sum();
                let radial = fp / n * dot;
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + f * d_out[i] + radial * v[i];
                    }
                });
            }
            Op::MaskedSoftmaxRows { a, mask, out } => {
                let d_out = take_out!(out);
                let (rows, cols) = (self.values[a.0].rows(), self.values[a.0].cols());
                let ov = self.values[out.0].data();
                ensure(adj, *a, rows * cols);
                acc(adj, *a, |g| {
                    for r in 0..rows {
                        let base = r * cols;
                        let mut dot = T::zero();
                        for c in 0..cols {
                            dot = dot + d_out[base + c] * ov[base + c];
                        }
                        for c in 0..cols {
                            if mask[c] {
                                g[base + c] =
                                    g[base + c] + ov[base + c] * (d_out[base + c] - dot);
                            }
                        }
                    }
                });
            }
            Op::RowNormalize { a, out } => {
                let d_out = take_out!(out);
                let (rows, cols) = (self.values[a.0].rows(), self.values[a.0].cols());
                let av = self.values[a.0].data();
                ensure(adj, *a, rows * cols);
                acc(adj, *a, |g| {
                    for r in 0..rows {
                        let base = r * cols;
                        let row = &av[base..base + cols];
                        let n = guarded_norm(row);
                        let mut dot = T::zero();
                        for c in 0..cols {
                            dot = dot + d_out[base + c] * row[c];
                        }
                        let n3 = n * n * n;
                        for c in 0..cols {
                            g[base + c] = g[base + c] + d_out[base + c] / n - row[c] * dot / n3;
                        }
                    }
                });
            }
            Op::Norm { a, out } => {
                let d_out = take_out!(out);
                let av = self.values[a.0].data();
                // Floor the norm itself, not its square: vector lengths of
                // 1e-5 are routine under squash and must keep exact
                // gradients, while the derivative stays finite at 0.
                let denom = self.values[out.0].data()[0].max(T::from_f64(1e-12));
                let scale = d_out[0] / denom;
                ensure(adj, *a, av.len());
                acc(adj, *a, |g| {
                    for i in 0..av.len() {
                        g[i] = g[i] + scale * av[i];
                    }
                });
            }
            Op::Sum { a, out } => {
                let d_out = take_out!(out);
                let len = self.values[a.0].numel();
                ensure(adj, *a, len);
                acc(adj, *a, |g| {
                    for gi in g.iter_mut() {
                        *gi = *gi + d_out[0];
                    }
                });
            }
            Op::Mse { pred, target, out } => {
                let d_out = take_out!(out);
                let pv = self.values[pred.0].data();
                let tv = self.values[target.0].data();
                let two_over_n = T::from_f64(2.0 / pv.len() as f64) * d_out[0];
                ensure(adj, *pred, pv.len());
                acc(adj, *pred, |g| {
                    for i in 0..pv.len() {
                        g[i] = g[i] + two_over_n * (pv[i] - tv[i]);
                    }
                });
                ensure(adj, *target, tv.len());
                acc(adj, *target, |g| {
                    for i in 0..tv.len() {
                        g[i] = g[i] - two_over_n * (pv[i] - tv[i]);
                    }
                });
            }
            Op::Dropout {
                a,
                mask,
                keep_scale,
                out,
            } => {
                let d_out = take_out!(out);
                ensure(adj, *a, d_out.len());
                acc(adj, *a, |g| {
                    for i in 0..d_out.len() {
                        if mask[i] {
                            g[i] = g[i] + d_out[i] * *keep_scale;
                        }
                    }
                });
            }
            Op::Gather { table, ids, out } => {
                let d_out = take_out!(out);
                let cols = self.values[table.0].cols();
                ensure(adj, *table, self.values[table.0].numel());
                acc(adj, *table, |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            g[id * cols + j] = g[id * cols + j] + d_out[r * cols + j];
                        }
                    }
                });
            }
        }
    }
}

/// Orthogonality penalty assembled from recorded primitives:
/// `‖row_normalize(T)·row_normalize(T)ᵀ − I‖_F`.
pub fn orthogonality_penalty_op<T: Scalar>(
    tape: &mut Tape<T>,
    topics: ValueId,
) -> Result<ValueId, TensorError> {
    let k = tape.value(topics).rows();
    let tn = tape.row_normalize(topics)?;
    let tnt = tape.transpose(tn)?;
    let gram = tape.matmul(tn, tnt)?;
    let mut eye = Tensor::zeros(&[k, k]);
    for i in 0..k {
        eye.data_mut()[i * k + i] = T::one();
    }
    let eye = tape.input(eye);
    let diff = tape.sub(gram, eye)?;
    Ok(tape.norm(diff))
}
