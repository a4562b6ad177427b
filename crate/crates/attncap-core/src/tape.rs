//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records one operation per forward call, in execution order,
//! which is by construction a topological order of the graph. Backward
//! replays the records once, in reverse, accumulating gradients into every
//! participating tensor. The tape is rebuilt on every forward pass; parameter
//! updates must happen only after backward has run, since backward rules read
//! the values captured at forward time through shared handles.
//!
//! Shapes are strict: binary elementwise ops demand identical shapes, and the
//! only broadcasting anywhere is scalar-with-tensor ([`Tape::affine`]).
//! Everything else goes through explicit ops such as [`Tape::broadcast_rows`]
//! and [`Tape::reshape`].

use alloc::boxed::Box;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

type BackwardFn = Box<dyn Fn()>;

/// Recorder for one forward pass. Single-threaded; independent tapes are
/// independent.
#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<BackwardFn>>,
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> CoreError {
    CoreError::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(CoreError::Contract(format!(
            "{op} needs a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Numerically safe softmax of a slice (max-subtracted, normalized by the
/// computed sum).
pub(crate) fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| libm::exp(x - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// log(sum(exp(v))) with max subtraction.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(sum)
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Number of recorded operations (diagnostics and tests).
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.borrow().is_empty()
    }

    fn record(&self, f: BackwardFn) {
        self.records.borrow_mut().push(f);
    }

    fn unary(
        &self,
        input: &Tensor,
        data: Vec<f64>,
        backward: impl Fn(&Tensor, &Tensor) + 'static,
    ) -> Tensor {
        let out = Tensor::output(input.shape().to_vec(), data, input.requires_grad());
        if out.requires_grad() {
            let input = input.clone();
            let out_c = out.clone();
            self.record(Box::new(move || backward(&input, &out_c)));
        }
        out
    }

    /// Matrix product of rank-2 tensors `[m,k] x [k,n] -> [m,n]`.
    /// Backward: `dA += dC·Bᵀ`, `dB += Aᵀ·dC`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_rank("matmul", a, 2)?;
        require_rank("matmul", b, 2)?;
        if a.cols() != b.rows() {
            return Err(shape_err("matmul", a, b));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut data = vec![0.0; m * n];
        {
            let ad = a.data();
            let bd = b.data();
            for i in 0..m {
                for t in 0..k {
                    let aval = ad[i * k + t];
                    if aval == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        data[i * n + j] += aval * bd[t * n + j];
                    }
                }
            }
        }
        let out = Tensor::output(
            vec![m, n],
            data,
            a.requires_grad() || b.requires_grad(),
        );
        if out.requires_grad() {
            let (a, b, out_c) = (a.clone(), b.clone(), out.clone());
            self.record(Box::new(move || {
                let dc = out_c.grad().expect("op output always carries grad");
                if a.requires_grad() {
                    let bd = b.data();
                    let mut delta = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = dc[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for t in 0..k {
                                delta[i * k + t] += g * bd[t * n + j];
                            }
                        }
                    }
                    drop(bd);
                    a.accumulate_grad(&delta);
                }
                if b.requires_grad() {
                    let ad = a.data();
                    let mut delta = vec![0.0; k * n];
                    for i in 0..m {
                        for t in 0..k {
                            let aval = ad[i * k + t];
                            if aval == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                delta[t * n + j] += aval * dc[i * n + j];
                            }
                        }
                    }
                    drop(ad);
                    b.accumulate_grad(&delta);
                }
            }));
        }
        Ok(out)
    }

    /// Matrix-vector product `[r,c] x [c] -> [r]`.
    pub fn matvec(&self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        require_rank("matvec", m, 2)?;
        require_rank("matvec", v, 1)?;
        if m.cols() != v.shape()[0] {
            return Err(shape_err("matvec", m, v));
        }
        let (r, c) = (m.rows(), m.cols());
        let mut data = vec![0.0; r];
        {
            let md = m.data();
            let vd = v.data();
            for i in 0..r {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += md[i * c + j] * vd[j];
                }
                data[i] = acc;
            }
        }
        let out = Tensor::output(vec![r], data, m.requires_grad() || v.requires_grad());
        if out.requires_grad() {
            let (m, v, out_c) = (m.clone(), v.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                if m.requires_grad() {
                    let vd = v.data();
                    let mut delta = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            delta[i * c + j] = dy[i] * vd[j];
                        }
                    }
                    drop(vd);
                    m.accumulate_grad(&delta);
                }
                if v.requires_grad() {
                    let md = m.data();
                    let mut delta = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            delta[j] += md[i * c + j] * dy[i];
                        }
                    }
                    drop(md);
                    v.accumulate_grad(&delta);
                }
            }));
        }
        Ok(out)
    }

    /// Row-vector-matrix product `[r] x [r,c] -> [c]`, i.e. a weighted sum of
    /// the matrix rows.
    pub fn vecmat(&self, v: &Tensor, m: &Tensor) -> Result<Tensor> {
        require_rank("vecmat", v, 1)?;
        require_rank("vecmat", m, 2)?;
        if v.shape()[0] != m.rows() {
            return Err(shape_err("vecmat", v, m));
        }
        let (r, c) = (m.rows(), m.cols());
        let mut data = vec![0.0; c];
        {
            let md = m.data();
            let vd = v.data();
            for i in 0..r {
                let w = vd[i];
                if w == 0.0 {
                    continue;
                }
                for j in 0..c {
                    data[j] += w * md[i * c + j];
                }
            }
        }
        let out = Tensor::output(vec![c], data, v.requires_grad() || m.requires_grad());
        if out.requires_grad() {
            let (v, m, out_c) = (v.clone(), m.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                if v.requires_grad() {
                    let md = m.data();
                    let mut delta = vec![0.0; r];
                    for i in 0..r {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += md[i * c + j] * dy[j];
                        }
                        delta[i] = acc;
                    }
                    drop(md);
                    v.accumulate_grad(&delta);
                }
                if m.requires_grad() {
                    let vd = v.data();
                    let mut delta = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            delta[i * c + j] = vd[i] * dy[j];
                        }
                    }
                    drop(vd);
                    m.accumulate_grad(&delta);
                }
            }));
        }
        Ok(out)
    }

    fn binary_elementwise(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        forward: impl Fn(f64, f64) -> f64,
        backward: impl Fn(&Tensor, &Tensor, &Tensor) + 'static,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err(op, a, b));
        }
        let data: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| forward(x, y))
            .collect();
        let out = Tensor::output(
            a.shape().to_vec(),
            data,
            a.requires_grad() || b.requires_grad(),
        );
        if out.requires_grad() {
            let (a, b, out_c) = (a.clone(), b.clone(), out.clone());
            self.record(Box::new(move || backward(&a, &b, &out_c)));
        }
        Ok(out)
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("add", a, b, |x, y| x + y, |a, b, out| {
            let dy = out.grad().expect("op output always carries grad");
            a.accumulate_grad(&dy);
            b.accumulate_grad(&dy);
        })
    }

    /// Elementwise difference of same-shape tensors.
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, |a, b, out| {
            let dy = out.grad().expect("op output always carries grad");
            a.accumulate_grad(&dy);
            if b.requires_grad() {
                let neg: Vec<f64> = dy.iter().map(|g| -g).collect();
                b.accumulate_grad(&neg);
            }
        })
    }

    /// Hadamard product of same-shape tensors.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, |a, b, out| {
            let dy = out.grad().expect("op output always carries grad");
            if a.requires_grad() {
                let bd = b.data();
                let delta: Vec<f64> = dy.iter().zip(bd.iter()).map(|(g, y)| g * y).collect();
                drop(bd);
                a.accumulate_grad(&delta);
            }
            if b.requires_grad() {
                let ad = a.data();
                let delta: Vec<f64> = dy.iter().zip(ad.iter()).map(|(g, x)| g * x).collect();
                drop(ad);
                b.accumulate_grad(&delta);
            }
        })
    }

    /// Scalar-broadcast map `scale·x + shift` (the one permitted broadcast).
    pub fn affine(&self, x: &Tensor, scale: f64, shift: f64) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| scale * v + shift).collect();
        self.unary(x, data, move |input, out| {
            let dy = out.grad().expect("op output always carries grad");
            let delta: Vec<f64> = dy.iter().map(|g| g * scale).collect();
            drop(dy);
            input.accumulate_grad(&delta);
        })
    }

    /// Elementwise hyperbolic tangent. `d tanh = 1 − tanh²`.
    pub fn tanh(&self, x: &Tensor) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| libm::tanh(v)).collect();
        self.unary(x, data, |input, out| {
            let dy = out.grad().expect("op output always carries grad");
            let yd = out.data();
            let delta: Vec<f64> = dy.iter().zip(yd.iter()).map(|(g, y)| g * (1.0 - y * y)).collect();
            drop(yd);
            drop(dy);
            input.accumulate_grad(&delta);
        })
    }

    /// Elementwise logistic sigmoid. `dσ = σ(1 − σ)`.
    pub fn sigmoid(&self, x: &Tensor) -> Tensor {
        let data: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| {
                // Split on the sign to avoid overflowing exp.
                if v >= 0.0 {
                    1.0 / (1.0 + libm::exp(-v))
                } else {
                    let e = libm::exp(v);
                    e / (1.0 + e)
                }
            })
            .collect();
        self.unary(x, data, |input, out| {
            let dy = out.grad().expect("op output always carries grad");
            let yd = out.data();
            let delta: Vec<f64> = dy
                .iter()
                .zip(yd.iter())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            drop(yd);
            drop(dy);
            input.accumulate_grad(&delta);
        })
    }

    /// Elementwise exponential.
    pub fn exp(&self, x: &Tensor) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| libm::exp(v)).collect();
        self.unary(x, data, |input, out| {
            let dy = out.grad().expect("op output always carries grad");
            let yd = out.data();
            let delta: Vec<f64> = dy.iter().zip(yd.iter()).map(|(g, y)| g * y).collect();
            drop(yd);
            drop(dy);
            input.accumulate_grad(&delta);
        })
    }

    /// Elementwise natural logarithm; every entry must be strictly positive.
    pub fn log(&self, x: &Tensor) -> Result<Tensor> {
        if let Some(&bad) = x.data().iter().find(|v| **v <= 0.0) {
            return Err(CoreError::Domain {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        let data: Vec<f64> = x.data().iter().map(|&v| libm::log(v)).collect();
        Ok(self.unary(x, data, |input, out| {
            let dy = out.grad().expect("op output always carries grad");
            let xd = input.data();
            let delta: Vec<f64> = dy.iter().zip(xd.iter()).map(|(g, x)| g / x).collect();
            drop(xd);
            drop(dy);
            input.accumulate_grad(&delta);
        }))
    }

    /// Softmax over a rank-1 tensor: max-subtracted, entries nonnegative and
    /// summing to one.
    pub fn softmax(&self, v: &Tensor) -> Result<Tensor> {
        require_rank("softmax", v, 1)?;
        if v.numel() == 0 {
            return Err(CoreError::Domain {
                op: "softmax",
                detail: "softmax of an empty vector".to_string(),
            });
        }
        let data = softmax_slice(&v.data());
        Ok(self.unary(v, data, |input, out| {
            let dy = out.grad().expect("op output always carries grad");
            let yd = out.data();
            let dot: f64 = dy.iter().zip(yd.iter()).map(|(g, y)| g * y).sum();
            let delta: Vec<f64> = dy
                .iter()
                .zip(yd.iter())
                .map(|(g, y)| y * (g - dot))
                .collect();
            drop(yd);
            drop(dy);
            input.accumulate_grad(&delta);
        }))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&self, x: &Tensor) -> Tensor {
        let total: f64 = x.data().iter().sum();
        let out = Tensor::output(vec![1], vec![total], x.requires_grad());
        if out.requires_grad() {
            let (x, out_c) = (x.clone(), out.clone());
            self.record(Box::new(move || {
                let g = out_c.grad().expect("op output always carries grad")[0];
                let delta = vec![g; x.numel()];
                x.accumulate_grad(&delta);
            }));
        }
        out
    }

    /// Column means of a rank-2 tensor: `[r,c] -> [c]`.
    pub fn mean_rows(&self, m: &Tensor) -> Result<Tensor> {
        require_rank("mean_rows", m, 2)?;
        let (r, c) = (m.rows(), m.cols());
        let md = m.data();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += md[i * c + j];
            }
        }
        drop(md);
        let inv = 1.0 / r as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::output(vec![c], data, m.requires_grad());
        if out.requires_grad() {
            let (m, out_c) = (m.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                let mut delta = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        delta[i * c + j] = dy[j] * inv;
                    }
                }
                drop(dy);
                m.accumulate_grad(&delta);
            }));
        }
        Ok(out)
    }

    /// Select row `index` of a rank-2 tensor: `[r,c] -> [c]`. Backward
    /// scatters into that row only.
    pub fn row(&self, m: &Tensor, index: usize) -> Result<Tensor> {
        require_rank("row", m, 2)?;
        let (r, c) = (m.rows(), m.cols());
        if index >= r {
            return Err(CoreError::Contract(format!(
                "row index {index} out of range for {r} rows"
            )));
        }
        let data = m.data()[index * c..(index + 1) * c].to_vec();
        let out = Tensor::output(vec![c], data, m.requires_grad());
        if out.requires_grad() {
            let (m, out_c) = (m.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                let mut g = m.grad_mut().expect("recorded input has grad");
                for j in 0..c {
                    g[index * c + j] += dy[j];
                }
            }));
        }
        Ok(out)
    }

    /// Concatenate two rank-1 tensors.
    pub fn concat(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_rank("concat", a, 1)?;
        require_rank("concat", b, 1)?;
        let (p, q) = (a.numel(), b.numel());
        let mut data = a.to_vec();
        data.extend_from_slice(&b.data());
        let out = Tensor::output(vec![p + q], data, a.requires_grad() || b.requires_grad());
        if out.requires_grad() {
            let (a, b, out_c) = (a.clone(), b.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                a.accumulate_grad(&dy[..p]);
                b.accumulate_grad(&dy[p..]);
            }));
        }
        Ok(out)
    }

    /// View with a new shape holding the same number of elements.
    pub fn reshape(&self, x: &Tensor, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != x.numel() {
            return Err(CoreError::Shape {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::output(shape, x.to_vec(), x.requires_grad());
        if out.requires_grad() {
            let (x, out_c) = (x.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                x.accumulate_grad(&dy);
            }));
        }
        Ok(out)
    }

    /// Tile a rank-1 tensor as `rows` identical rows: `[c] -> [rows,c]`.
    /// Backward sums the incoming gradient over rows.
    pub fn broadcast_rows(&self, v: &Tensor, rows: usize) -> Result<Tensor> {
        require_rank("broadcast_rows", v, 1)?;
        if rows == 0 {
            return Err(CoreError::Contract("broadcast_rows needs at least one row".to_string()));
        }
        let c = v.numel();
        let vd = v.to_vec();
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(&vd);
        }
        let out = Tensor::output(vec![rows, c], data, v.requires_grad());
        if out.requires_grad() {
            let (v, out_c) = (v.clone(), out.clone());
            self.record(Box::new(move || {
                let dy = out_c.grad().expect("op output always carries grad");
                let mut delta = vec![0.0; c];
                for i in 0..rows {
                    for j in 0..c {
                        delta[j] += dy[i * c + j];
                    }
                }
                drop(dy);
                v.accumulate_grad(&delta);
            }));
        }
        Ok(out)
    }

    /// Fused, numerically stable `−log softmax(logits)[target]` over a rank-1
    /// logits tensor. Backward is `softmax − one_hot(target)`.
    pub fn cross_entropy_logits(&self, logits: &Tensor, target: usize) -> Result<Tensor> {
        require_rank("cross_entropy_logits", logits, 1)?;
        let n = logits.numel();
        if target >= n {
            return Err(CoreError::Contract(format!(
                "target {target} out of range for {n} classes"
            )));
        }
        let ld = logits.data();
        let loss = log_sum_exp(&ld) - ld[target];
        let probs = softmax_slice(&ld);
        drop(ld);
        // A tiny negative residue can appear when the target dominates; the
        // true loss is nonnegative by construction.
        let loss = loss.max(0.0);
        let out = Tensor::output(vec![1], vec![loss], logits.requires_grad());
        if out.requires_grad() {
            let (logits, out_c) = (logits.clone(), out.clone());
            self.record(Box::new(move || {
                let g = out_c.grad().expect("op output always carries grad")[0];
                let mut delta: Vec<f64> = probs.iter().map(|&p| g * p).collect();
                delta[target] -= g;
                logits.accumulate_grad(&delta);
            }));
        }
        Ok(out)
    }

    /// Reverse pass from a scalar loss recorded on this tape.
    ///
    /// Seeds the loss gradient with 1 and replays every record once, in
    /// reverse order. Gradients accumulate; the caller zeroes them between
    /// passes. A loss that depends on no parameters leaves all gradients at
    /// zero.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(CoreError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Ok(());
        }
        loss.accumulate_grad(&[1.0]);
        let records = self.records.borrow();
        for f in records.iter().rev() {
            f();
        }
        Ok(())
    }
}
