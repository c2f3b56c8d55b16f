use std::collections::HashMap;

use rand::Rng;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_acc, Scalar, Tensor};
use super::NumericsError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    Square(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    Dropout(Var, Vec<T>),
    MaskedFill(Var, Vec<bool>),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    BceWithLogits(Var, Vec<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::Square(..) => "square",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat(..) => "concat",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::Dropout(..) => "dropout",
            Op::MaskedFill(..) => "masked_fill",
            Op::GatherRows(..) => "gather_rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records every forward operation so that [`Tape::backward`] can replay
/// them in reverse.
///
/// A tape is single-use and single-threaded: build one per forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Number of recorded operations with the given name (e.g. `"layer_norm"`).
    pub fn count_ops(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == name).count()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize), NumericsError> {
        self.nodes[v.0].value.dims2()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, NumericsError> {
        value.dims2()?;
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter. Repeated requests return the same node,
    /// so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Result<Var, NumericsError> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let value = store.value(id).clone();
        let v = self.push(value, Op::Param(id))?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, op)
    }

    /// Elementwise sum. A `[1, n]` right operand is broadcast over the rows of
    /// an `[m, n]` left operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) == self.shape(b) {
            return self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b));
        }
        let (m, n) = self.dims(a)?;
        let (r, c) = self.dims(b)?;
        if r != 1 || c != n {
            return Err(self.mismatch("add", a, b));
        }
        let row = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = *o + bv;
            }
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise product with a constant tensor that takes no gradient.
    pub fn mul_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var, NumericsError> {
        if self.shape(a) != c.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_const",
                left: self.shape(a).to_vec(),
                right: c.shape().to_vec(),
            });
        }
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(c.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::MulConst(a, c.data().to_vec()))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, NumericsError> {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// Softmax along the last axis (per row).
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a)?;
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(a))
    }

    /// Row-wise layer normalization with learnable `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x)?;
        if self.shape(gain) != [1, n] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != [1, n] {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let nf = T::from_usize(n).unwrap();
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / nf;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / nf;
            let r = T::one() / (var + eps).sqrt();
            inv_std[i] = r;
            for j in 0..n {
                let xh = (row[j] - mean) * r;
                normed[i * n + j] = xh;
                out[i * n + j] = g[j] * xh + b[j];
            }
        }
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Concatenation along the last axis; all parts must share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat"))?;
        let (m, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(self.mismatch("concat", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            Tensor::new(vec![m, total], out)?,
            Op::Concat(parts.to_vec()),
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = self.value(a);
        let s = v.sum() / T::from_usize(v.numel().max(1)).unwrap();
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    /// Identity (no node recorded) when not training or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, NumericsError> {
        if !training || rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(NumericsError::InvalidArgument(format!(
                "dropout rate {rate} must be < 1"
            )));
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let va = self.value(a);
        let mask: Vec<T> = (0..va.numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Dropout(a, mask))
    }

    /// Replaces entries where `mask` is true with `value`; those entries
    /// receive no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>, value: T) -> Result<Var, NumericsError> {
        let va = self.value(a);
        if mask.len() != va.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_fill",
                left: va.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = va
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::MaskedFill(a, mask))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims(table)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::InvalidArgument(format!(
                "row index {bad} out of range for table with {rows} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        self.push(
            Tensor::new(vec![indices.len(), cols], out)?,
            Op::GatherRows(table, indices.to_vec()),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a).transpose()?;
        self.push(t, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumericsError> {
        let t = self.value(a).clone().reshaped(vec![rows, cols])?;
        self.push(t, Op::Reshape(a))
    }

    /// Mean binary cross-entropy computed from logits:
    /// `mean(softplus(z) - y·z)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var, NumericsError> {
        let v = self.value(logits);
        if v.numel() != targets.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "bce_with_logits",
                left: v.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let n = T::from_usize(targets.len().max(1)).unwrap();
        let total = v
            .data()
            .iter()
            .zip(targets)
            .fold(T::zero(), |acc, (&z, &y)| acc + softplus(z) - y * z);
        self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogits(logits, targets.to_vec()),
        )
    }

    /// Reverse pass from a scalar `loss`. Returns one gradient per parameter
    /// in `store`; parameters not reached by the loss get zeros.
    pub fn backward(
        &self,
        loss: Var,
        store: &ParameterStore<T>,
    ) -> Result<Gradients<T>, NumericsError> {
        let mut grads = store.zero_gradients();
        self.backward_into(loss, T::one(), &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but accumulates `seed · ∂loss/∂θ` into `grads`.
    pub fn backward_into(
        &self,
        loss: Var,
        seed: T,
        grads: &mut Gradients<T>,
    ) -> Result<(), NumericsError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NotScalar(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Tensor::filled(lv.shape(), seed));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate(*id, &g)?,
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = out.cols();
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_into(g.data(), self.value(*b).data(), &mut da, m, n, k);
                    accumulate(&mut adj, *a, Tensor::new(vec![m, k], da)?);
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_acc(self.value(*a).data(), g.data(), &mut db, m, k, n);
                    accumulate(&mut adj, *b, Tensor::new(vec![k, n], db)?);
                }
                Op::MatMulNt(a, b) => {
                    // out[m×n] = a[m×k] · b[n×k]ᵀ
                    let (m, k) = self.value(*a).dims2()?;
                    let n = out.cols();
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g.data(), self.value(*b).data(), &mut da, m, n, k);
                    accumulate(&mut adj, *a, Tensor::new(vec![m, k], da)?);
                    let mut db = vec![T::zero(); n * k];
                    matmul_tn_acc(g.data(), self.value(*a).data(), &mut db, m, n, k);
                    accumulate(&mut adj, *b, Tensor::new(vec![n, k], db)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::AddRow(a, b) => {
                    let (m, n) = g.dims2()?;
                    let mut db = vec![T::zero(); n];
                    for i in 0..m {
                        for (d, &v) in db.iter_mut().zip(g.row_slice(i)) {
                            *d = *d + v;
                        }
                    }
                    accumulate(&mut adj, *b, Tensor::row(db));
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, self.value(*b), |gv, bv| gv * bv);
                    let db = zip_map(&g, self.value(*a), |gv, av| gv * av);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MulConst(a, c) => {
                    let data = g.data().iter().zip(c).map(|(&gv, &cv)| gv * cv).collect();
                    accumulate(&mut adj, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut adj, *a, g.map(|v| v * s));
                }
                Op::Square(a) => {
                    let two = T::from_f64_lossy(2.0);
                    let da = zip_map(&g, self.value(*a), |gv, av| two * av * gv);
                    accumulate(&mut adj, *a, da);
                }
                Op::Tanh(a) => {
                    let da = zip_map(&g, out, |gv, y| gv * (T::one() - y * y));
                    accumulate(&mut adj, *a, da);
                }
                Op::Relu(a) => {
                    let da = zip_map(&g, self.value(*a), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut adj, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = zip_map(&g, out, |gv, y| gv * y * (T::one() - y));
                    accumulate(&mut adj, *a, da);
                }
                Op::Softmax(a) => {
                    let (m, n) = out.dims2()?;
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        let y = out.row_slice(i);
                        let gy = g.row_slice(i);
                        let dot = y
                            .iter()
                            .zip(gy)
                            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for j in 0..n {
                            da[i * n + j] = y[j] * (gy[j] - dot);
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(vec![m, n], da)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (m, n) = out.dims2()?;
                    let nf = T::from_usize(n).unwrap();
                    let gv = self.value(*gain).data();
                    let mut dx = vec![T::zero(); m * n];
                    let mut dgain = vec![T::zero(); n];
                    let mut dbias = vec![T::zero(); n];
                    let mut dxh = vec![T::zero(); n];
                    for i in 0..m {
                        let gy = g.row_slice(i);
                        let xh = &normed[i * n..(i + 1) * n];
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..n {
                            dgain[j] = dgain[j] + gy[j] * xh[j];
                            dbias[j] = dbias[j] + gy[j];
                            dxh[j] = gy[j] * gv[j];
                            mean_dxh = mean_dxh + dxh[j];
                            mean_dxh_xh = mean_dxh_xh + dxh[j] * xh[j];
                        }
                        mean_dxh = mean_dxh / nf;
                        mean_dxh_xh = mean_dxh_xh / nf;
                        for j in 0..n {
                            dx[i * n + j] = inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::new(vec![m, n], dx)?);
                    accumulate(&mut adj, *gain, Tensor::row(dgain));
                    accumulate(&mut adj, *bias, Tensor::row(dbias));
                }
                Op::Concat(parts) => {
                    let (m, total) = g.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(
                                &g.data()[i * total + offset..i * total + offset + w],
                            );
                        }
                        accumulate(&mut adj, p, Tensor::new(vec![m, w], dp)?);
                        offset += w;
                    }
                }
                Op::SumAll(a) => {
                    let s = g.data()[0];
                    accumulate(&mut adj, *a, Tensor::filled(self.shape(*a), s));
                }
                Op::MeanAll(a) => {
                    let n = T::from_usize(self.value(*a).numel().max(1)).unwrap();
                    let s = g.data()[0] / n;
                    accumulate(&mut adj, *a, Tensor::filled(self.shape(*a), s));
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    accumulate(&mut adj, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::MaskedFill(a, mask) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&gv, &m)| if m { T::zero() } else { gv })
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::GatherRows(table, indices) => {
                    let (rows, cols) = self.value(*table).dims2()?;
                    let mut dt = vec![T::zero(); rows * cols];
                    for (i, &r) in indices.iter().enumerate() {
                        for (d, &v) in dt[r * cols..(r + 1) * cols].iter_mut().zip(g.row_slice(i)) {
                            *d = *d + v;
                        }
                    }
                    accumulate(&mut adj, *table, Tensor::new(vec![rows, cols], dt)?);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()?),
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut adj, *a, g.reshaped(shape)?);
                }
                Op::BceWithLogits(a, targets) => {
                    let v = self.value(*a);
                    let n = T::from_usize(targets.len().max(1)).unwrap();
                    let s = g.data()[0] / n;
                    let data = v
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| s * (sigmoid(z) - y))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(v.shape().to_vec(), data)?);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
