//! Reverse-mode autodiff on an append-only operation tape.
//!
//! Values live in an arena of slots; every operation records its inputs,
//! output, and enough metadata to replay its gradient rule. `backward`
//! walks the records exactly once in reverse, accumulating gradients
//! additively into every `requires_grad` slot (fan-out therefore sums).

use crate::error::{Error, Result};
use crate::wavelet::{self, WaveletFilter};

use super::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Slot {
    value: Tensor,
    requires_grad: bool,
}

enum Op {
    Matmul { a: Var, b: Var, out: Var },
    /// `A · Bᵀ` with `B` stored untransposed.
    MatmulTb { a: Var, b: Var, out: Var },
    Add { a: Var, b: Var, out: Var },
    Sub { a: Var, b: Var, out: Var },
    /// Broadcast-add a length-n row vector over an m×n matrix.
    AddRow { a: Var, row: Var, out: Var },
    Scale { a: Var, c: f64, out: Var },
    AddConst { a: Var, out: Var },
    /// Multiply every element of `a` by the scalar slot `s`.
    MulScalar { a: Var, s: Var, out: Var },
    Dot { a: Var, b: Var, out: Var },
    Exp { a: Var, out: Var },
    Gelu { a: Var, out: Var },
    SoftmaxRows { a: Var, out: Var },
    RmsNormRows { x: Var, gain: Var, eps: f64, out: Var },
    LayerNormRows { x: Var, gain: Var, eps: f64, out: Var },
    ConcatCols { parts: Vec<Var>, out: Var },
    SliceCols { a: Var, offset: usize, len: usize, out: Var },
    /// Per-row SplitWave + multi-level IDWT; backward is the forward DWT.
    IdwtRows { a: Var, filter: WaveletFilter, levels: usize, out: Var },
    /// Elementwise product with a constant mask (dropout).
    MulMask { a: Var, mask: Vec<f64>, out: Var },
    /// Per-row affine map with constant coefficients: `y[i,:] = a[i,:]*scale[i] + shift[i]`.
    AffineRows { a: Var, scale: Vec<f64>, out: Var },
    MseLoss { pred: Var, target: Var, out: Var },
    Sum { a: Var, out: Var },
    MeanScalars { parts: Vec<Var>, out: Var },
}

/// Gradients produced by one backward pass, indexed by tape handle.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, if `v` participates in the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Tape {
    slots: Vec<Slot>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.slots[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.slots[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Registers a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false)
    }

    /// Registers a learnable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let v = Var(self.slots.len());
        self.slots.push(Slot {
            value,
            requires_grad,
        });
        v
    }

    fn push_output(&mut self, value: Tensor, inputs: &[Var]) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite values produced by a forward operation"
        );
        let rg = inputs.iter().any(|v| self.slots[v.0].requires_grad);
        self.push(value, rg)
    }

    // ── forward operations ───────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = ta.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aik) in arow.iter().enumerate() {
                let brow = &tb.values()[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        let _ = k;
        let t = Tensor::new(vec![m, n], out)?;
        let out = self.push_output(t, &[a, b]);
        self.ops.push(Op::Matmul { a, b, out });
        Ok(out)
    }

    /// `A · Bᵀ` where `B` is given untransposed (`[n×k]`).
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(Error::Shape {
                op: "matmul_tb",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), tb.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = ta.row(i);
            for j in 0..n {
                let brow = tb.row(j);
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        let out = self.push_output(t, &[a, b]);
        self.ops.push(Op::MatmulTb { a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "add", |x, y| x + y)?;
        let out = self.push_output(t, &[a, b]);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let out = self.push_output(t, &[a, b]);
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    fn elementwise(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let values = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), values)
    }

    /// Affine map along the last dimension: `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let prod = self.matmul(x, w)?;
        self.add_row(prod, b)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if ta.shape().len() != 2 || tr.len() != ta.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let n = ta.cols();
        let values = ta
            .values()
            .iter()
            .enumerate()
            .map(|(idx, v)| v + tr.values()[idx % n])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        let out = self.push_output(t, &[a, row]);
        self.ops.push(Op::AddRow { a, row, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let values = self.value(a).values().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), values).expect("same shape");
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::Scale { a, c, out });
        out
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let values = self.value(a).values().iter().map(|v| v + c).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), values).expect("same shape");
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::AddConst { a, out });
        out
    }

    /// Scales `a` by the scalar slot `s` (gradient flows into both).
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if !ts.is_scalar() {
            return Err(Error::Shape {
                op: "mul_scalar",
                lhs: self.value(a).shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let sv = ts.values()[0];
        let values = self.value(a).values().iter().map(|v| v * sv).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), values)?;
        let out = self.push_output(t, &[a, s]);
        self.ops.push(Op::MulScalar { a, s, out });
        Ok(out)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::Shape {
                op: "dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v: f64 = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).sum();
        let out = self.push_output(Tensor::scalar(v), &[a, b]);
        self.ops.push(Op::Dot { a, b, out });
        Ok(out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let values = self.value(a).values().iter().map(|v| v.exp()).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), values).expect("same shape");
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::Exp { a, out });
        out
    }

    /// GELU, tanh form: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let values = self.value(a).values().iter().map(|&x| gelu_value(x)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), values).expect("same shape");
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::Gelu { a, out });
        out
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::Shape {
                op: "softmax_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = ta.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut values[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        let t = Tensor::new(vec![m, n], values)?;
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::SoftmaxRows { a, out });
        Ok(out)
    }

    /// RMS normalization along the last dimension with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gain));
        let d = tg.len();
        if d == 0 || tx.len() % d != 0 {
            return Err(Error::Shape {
                op: "rms_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        if eps < 0.0 {
            return Err(Error::Precondition("rms_norm eps must be >= 0".into()));
        }
        let mut values = vec![0.0; tx.len()];
        for (row, dst) in tx.values().chunks(d).zip(values.chunks_mut(d)) {
            let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = (ms + eps).sqrt();
            for ((dv, &xv), &gv) in dst.iter_mut().zip(row).zip(tg.values()) {
                *dv = if r == 0.0 { 0.0 } else { xv / r * gv };
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), values)?;
        let out = self.push_output(t, &[x, gain]);
        self.ops.push(Op::RmsNormRows { x, gain, eps, out });
        Ok(out)
    }

    /// Layer normalization (gain only) along the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gain));
        let d = tg.len();
        if d == 0 || tx.len() % d != 0 {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let mut values = vec![0.0; tx.len()];
        for (row, dst) in tx.values().chunks(d).zip(values.chunks_mut(d)) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let sd = (var + eps).sqrt();
            for ((dv, &xv), &gv) in dst.iter_mut().zip(row).zip(tg.values()) {
                *dv = (xv - mean) / sd * gv;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), values)?;
        let out = self.push_output(t, &[x, gain]);
        self.ops.push(Op::LayerNormRows { x, gain, eps, out });
        Ok(out)
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Precondition("concat_cols of zero parts".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            total += t.cols();
        }
        let mut values = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(vec![m, total], values)?;
        let out = self.push_output(t, parts);
        self.ops.push(Op::ConcatCols {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn slice_cols(&mut self, a: Var, offset: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || offset + len > ta.cols() {
            return Err(Error::Precondition(format!(
                "slice_cols [{offset}, {}) out of bounds for shape {:?}",
                offset + len,
                ta.shape()
            )));
        }
        let m = ta.rows();
        let mut values = Vec::with_capacity(m * len);
        for i in 0..m {
            values.extend_from_slice(&ta.row(i)[offset..offset + len]);
        }
        let t = Tensor::new(vec![m, len], values)?;
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::SliceCols { a, offset, len, out });
        Ok(out)
    }

    /// Treats each row as a flat coefficient vector: SplitWave then IDWT.
    /// The adjoint (and gradient rule) of the orthonormal synthesis is the
    /// analysis transform applied to the upstream gradient.
    pub fn idwt_rows(&mut self, a: Var, filter: &WaveletFilter, levels: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::Shape {
                op: "idwt_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut values = Vec::with_capacity(m * n);
        for i in 0..m {
            let coeffs = wavelet::split_wave(ta.row(i), n, levels)?;
            values.extend(wavelet::idwt_multilevel(&coeffs, filter)?);
        }
        let t = Tensor::new(vec![m, n], values)?;
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::IdwtRows {
            a,
            filter: filter.clone(),
            levels,
            out,
        });
        Ok(out)
    }

    /// Elementwise product with a constant mask (inverted-dropout style).
    pub fn mul_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::Shape {
                op: "mul_mask",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let values = ta.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::MulMask { a, mask, out });
        Ok(out)
    }

    /// Constant per-row affine map: `y[i,:] = a[i,:]·scale[i] + shift[i]`.
    pub fn affine_rows(&mut self, a: Var, scale: Vec<f64>, shift: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || scale.len() != ta.rows() || shift.len() != ta.rows() {
            return Err(Error::Shape {
                op: "affine_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![scale.len(), shift.len()],
            });
        }
        let n = ta.cols();
        let mut values = Vec::with_capacity(ta.len());
        for i in 0..ta.rows() {
            for &v in ta.row(i) {
                values.push(v * scale[i] + shift[i]);
            }
        }
        let _ = n;
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        let out = self.push_output(t, &[a]);
        self.ops.push(Op::AffineRows { a, scale, out });
        Ok(out)
    }

    /// Mean squared error between `pred` and `target` as a scalar slot.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::Shape {
                op: "mse_loss",
                lhs: tp.shape().to_vec(),
                rhs: tt.shape().to_vec(),
            });
        }
        let n = tp.len() as f64;
        let v: f64 = tp
            .values()
            .iter()
            .zip(tt.values())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let out = self.push_output(Tensor::scalar(v), &[pred, target]);
        self.ops.push(Op::MseLoss { pred, target, out });
        Ok(out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v: f64 = self.value(a).values().iter().sum();
        let out = self.push_output(Tensor::scalar(v), &[a]);
        self.ops.push(Op::Sum { a, out });
        out
    }

    /// Arithmetic mean of scalar slots.
    pub fn mean_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Precondition("mean_scalars of zero parts".into()));
        }
        let mut acc = 0.0;
        for &p in parts {
            let t = self.value(p);
            if !t.is_scalar() {
                return Err(Error::Shape {
                    op: "mean_scalars",
                    lhs: t.shape().to_vec(),
                    rhs: vec![1],
                });
            }
            acc += t.values()[0];
        }
        let out = self.push_output(Tensor::scalar(acc / parts.len() as f64), parts);
        self.ops.push(Op::MeanScalars {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// `requires_grad` slot reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Precondition(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.slots.len()];
        grads[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut grads);
        }
        // Keep gradients only for requires_grad slots; intermediates are
        // implementation detail.
        for (slot, g) in self.slots.iter().zip(grads.iter_mut()) {
            if !slot.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl FnOnce(&mut [f64])) {
        if !self.slots[v.0].requires_grad {
            return;
        }
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; self.slots[v.0].value.len()]);
        contrib(g);
    }

    fn backward_op(&self, op: &Op, grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Matmul { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                self.accumulate(grads, *a, |ga| {
                    // dA = dC · Bᵀ
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += d_out[i * n + j] * tb.values()[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    // dB = Aᵀ · dC
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += ta.values()[i * k + p] * d_out[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                });
            }
            Op::MatmulTb { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                self.accumulate(grads, *a, |ga| {
                    // dA = dC · B
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += d_out[i * n + j] * tb.values()[j * k + p];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    // dB = dCᵀ · A
                    for j in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += d_out[i * n + j] * ta.values()[i * k + p];
                            }
                            gb[j * k + p] += acc;
                        }
                    }
                });
            }
            Op::Add { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *a, |g| add_into(g, &d_out, 1.0));
                self.accumulate(grads, *b, |g| add_into(g, &d_out, 1.0));
            }
            Op::Sub { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *a, |g| add_into(g, &d_out, 1.0));
                self.accumulate(grads, *b, |g| add_into(g, &d_out, -1.0));
            }
            Op::AddRow { a, row, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let n = self.value(*row).len();
                self.accumulate(grads, *a, |g| add_into(g, &d_out, 1.0));
                self.accumulate(grads, *row, |g| {
                    for (idx, d) in d_out.iter().enumerate() {
                        g[idx % n] += d;
                    }
                });
            }
            Op::Scale { a, c, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *a, |g| add_into(g, &d_out, *c));
            }
            Op::AddConst { a, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *a, |g| add_into(g, &d_out, 1.0));
            }
            Op::MulScalar { a, s, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let sv = self.value(*s).values()[0];
                let ta = self.value(*a);
                self.accumulate(grads, *a, |g| add_into(g, &d_out, sv));
                self.accumulate(grads, *s, |g| {
                    g[0] += d_out
                        .iter()
                        .zip(ta.values())
                        .map(|(d, v)| d * v)
                        .sum::<f64>();
                });
            }
            Op::Dot { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dl = d_out[0];
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |g| add_into(g, tb.values(), dl));
                self.accumulate(grads, *b, |g| add_into(g, ta.values(), dl));
            }
            Op::Exp { a, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let to = self.value(*out);
                self.accumulate(grads, *a, |g| {
                    for ((gv, d), y) in g.iter_mut().zip(&d_out).zip(to.values()) {
                        *gv += d * y;
                    }
                });
            }
            Op::Gelu { a, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let ta = self.value(*a);
                self.accumulate(grads, *a, |g| {
                    for ((gv, d), &x) in g.iter_mut().zip(&d_out).zip(ta.values()) {
                        *gv += d * gelu_derivative(x);
                    }
                });
            }
            Op::SoftmaxRows { a, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let to = self.value(*out);
                let n = to.cols();
                self.accumulate(grads, *a, |g| {
                    for (row, (y, d)) in to.values().chunks(n).zip(d_out.chunks(n)).enumerate() {
                        let inner: f64 = y.iter().zip(d).map(|(yv, dv)| yv * dv).sum();
                        let dst = &mut g[row * n..(row + 1) * n];
                        for ((gv, &yv), &dv) in dst.iter_mut().zip(y).zip(d) {
                            *gv += yv * (dv - inner);
                        }
                    }
                });
            }
            Op::RmsNormRows { x, gain, eps, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let (tx, tg) = (self.value(*x), self.value(*gain));
                let d = tg.len();
                let gvals = tg.values().to_vec();
                self.accumulate(grads, *x, |g| {
                    for (row_idx, (row, dy)) in
                        tx.values().chunks(d).zip(d_out.chunks(d)).enumerate()
                    {
                        let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                        let r = (ms + eps).sqrt();
                        if r == 0.0 {
                            continue;
                        }
                        let s: f64 = dy
                            .iter()
                            .zip(&gvals)
                            .zip(row)
                            .map(|((dv, gv), xv)| dv * gv * xv)
                            .sum();
                        let dst = &mut g[row_idx * d..(row_idx + 1) * d];
                        for (j, gv_out) in dst.iter_mut().enumerate() {
                            *gv_out +=
                                dy[j] * gvals[j] / r - row[j] * s / (d as f64 * r * r * r);
                        }
                    }
                });
                self.accumulate(grads, *gain, |g| {
                    for (row, dy) in tx.values().chunks(d).zip(d_out.chunks(d)) {
                        let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                        let r = (ms + eps).sqrt();
                        if r == 0.0 {
                            continue;
                        }
                        for (j, gv) in g.iter_mut().enumerate() {
                            *gv += dy[j] * row[j] / r;
                        }
                    }
                });
            }
            Op::LayerNormRows { x, gain, eps, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let (tx, tg) = (self.value(*x), self.value(*gain));
                let d = tg.len();
                let nf = d as f64;
                let gvals = tg.values().to_vec();
                self.accumulate(grads, *x, |g| {
                    for (row_idx, (row, dy)) in
                        tx.values().chunks(d).zip(d_out.chunks(d)).enumerate()
                    {
                        let mean: f64 = row.iter().sum::<f64>() / nf;
                        let var: f64 =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let sd = (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / sd).collect();
                        let dyh: Vec<f64> =
                            dy.iter().zip(&gvals).map(|(dv, gv)| dv * gv).collect();
                        let mean_dyh: f64 = dyh.iter().sum::<f64>() / nf;
                        let mean_dyh_xhat: f64 =
                            dyh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                        let dst = &mut g[row_idx * d..(row_idx + 1) * d];
                        for (j, gv_out) in dst.iter_mut().enumerate() {
                            *gv_out += (dyh[j] - mean_dyh - xhat[j] * mean_dyh_xhat) / sd;
                        }
                    }
                });
                self.accumulate(grads, *gain, |g| {
                    for (row, dy) in tx.values().chunks(d).zip(d_out.chunks(d)) {
                        let mean: f64 = row.iter().sum::<f64>() / nf;
                        let var: f64 =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let sd = (var + eps).sqrt();
                        for (j, gv) in g.iter_mut().enumerate() {
                            *gv += dy[j] * (row[j] - mean) / sd;
                        }
                    }
                });
            }
            Op::ConcatCols { parts, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let m = self.value(*out).rows();
                let total = self.value(*out).cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |g| {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += d_out[i * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { a, offset, len, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let ta = self.value(*a);
                let (m, cols) = (ta.rows(), ta.cols());
                self.accumulate(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..*len {
                            g[i * cols + offset + j] += d_out[i * len + j];
                        }
                    }
                });
            }
            Op::IdwtRows {
                a,
                filter,
                levels,
                out,
            } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let n = self.value(*a).cols();
                self.accumulate(grads, *a, |g| {
                    for (row_idx, dy) in d_out.chunks(n).enumerate() {
                        let coeffs = wavelet::dwt_multilevel(dy, *levels, filter)
                            .expect("gradient length matches forward");
                        for (gv, cv) in g[row_idx * n..(row_idx + 1) * n]
                            .iter_mut()
                            .zip(coeffs.concat())
                        {
                            *gv += cv;
                        }
                    }
                });
            }
            Op::MulMask { a, mask, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *a, |g| {
                    for ((gv, d), m) in g.iter_mut().zip(&d_out).zip(mask) {
                        *gv += d * m;
                    }
                });
            }
            Op::AffineRows { a, scale, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let n = self.value(*a).cols();
                self.accumulate(grads, *a, |g| {
                    for (i, (grow, drow)) in g.chunks_mut(n).zip(d_out.chunks(n)).enumerate() {
                        for (gv, d) in grow.iter_mut().zip(drow) {
                            *gv += d * scale[i];
                        }
                    }
                });
            }
            Op::MseLoss { pred, target, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dl = d_out[0];
                let (tp, tt) = (self.value(*pred), self.value(*target));
                let n = tp.len() as f64;
                self.accumulate(grads, *pred, |g| {
                    for ((gv, p), t) in g.iter_mut().zip(tp.values()).zip(tt.values()) {
                        *gv += dl * 2.0 * (p - t) / n;
                    }
                });
                self.accumulate(grads, *target, |g| {
                    for ((gv, p), t) in g.iter_mut().zip(tp.values()).zip(tt.values()) {
                        *gv -= dl * 2.0 * (p - t) / n;
                    }
                });
            }
            Op::Sum { a, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dl = d_out[0];
                self.accumulate(grads, *a, |g| {
                    for gv in g.iter_mut() {
                        *gv += dl;
                    }
                });
            }
            Op::MeanScalars { parts, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dl = d_out[0] / parts.len() as f64;
                for &p in parts {
                    self.accumulate(grads, p, |g| g[0] += dl);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

const GELU_C: f64 = 0.7978845608028654; // √(2/π)
const GELU_A: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
