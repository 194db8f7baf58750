//! Forward kernels shared by the tape and by plain (non-differentiated) callers.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(Error::shape(op, t.shape(), &[]))
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let out = if n <= 16 {
        // Narrow right operand: dot products against its transpose.
        let bt = b.transpose();
        let (ad, btd) = (a.data(), bt.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(arow, &btd[j * k..(j + 1) * k]);
            }
        }
        out
    } else {
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    };
    Tensor::checked(vec![m, n], out, "matmul")
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    // Four accumulators in a fixed order: vectorizable and reproducible.
    let mut acc = [0.0f64; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
/// `aᵀ · b` without materializing the transpose.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = vec![0.0; a.cols() * b.cols()];
    matmul_tn_acc(&mut out, a, b);
    Tensor::from_raw(vec![a.cols(), b.cols()], out)
}

/// `out += aᵀ · b`.
pub(crate) fn matmul_tn_acc(out: &mut [f64], a: &Tensor, b: &Tensor) {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(k, b.rows());
    debug_assert_eq!(out.len(), m * n);
    let (ad, bd) = (a.data(), b.data());
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        if n == 1 {
            let bv = brow[0];
            for (o, &av) in out.iter_mut().zip(arow) {
                *o += av * bv;
            }
            continue;
        }
        for (i, &av) in arow.iter().enumerate() {
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
/// `a · bᵀ` without materializing the transpose.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = vec![0.0; a.rows() * b.rows()];
    matmul_nt_acc(&mut out, a, b);
    Tensor::from_raw(vec![a.rows(), b.rows()], out)
}

/// `out += a · bᵀ`.
pub(crate) fn matmul_nt_acc(out: &mut [f64], a: &Tensor, b: &Tensor) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.rows();
    debug_assert_eq!(k, b.cols());
    debug_assert_eq!(out.len(), m * n);
    let (ad, bd) = (a.data(), b.data());
    if k == 1 {
        for (i, &av) in ad.iter().enumerate() {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(bd) {
                *o += av * bv;
            }
        }
    } else {
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] += dot(arow, &bd[j * k..(j + 1) * k]);
            }
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    require_matrix("softmax_rows", x)?;
    let (m, n) = (x.rows(), x.cols());
    let mut out = x.data().to_vec();
    for r in 0..m {
        let row = &mut out[r * n..(r + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::checked(vec![m, n], out, "softmax_rows")
}

/// Output length of a temporal max-pool.
pub fn pooled_len(t: usize, k: usize, s: usize) -> usize {
    (t - k) / s + 1
}

/// Max-pool along the time (column) axis of a `C×T` matrix.
///
/// Returns the pooled `C×T'` matrix and, for every output cell, the source
/// column it came from. Ties resolve to the first index in the window.
pub fn maxpool_time(x: &Tensor, k: usize, s: usize) -> Result<(Tensor, Vec<usize>)> {
    require_matrix("maxpool_time", x)?;
    let (c, t) = (x.rows(), x.cols());
    if k == 0 || s == 0 {
        return Err(Error::invalid("maxpool_time window and stride must be positive"));
    }
    if k > t {
        return Err(Error::shape("maxpool_time", x.shape(), &[k, s]));
    }
    let tp = pooled_len(t, k, s);
    let mut out = Vec::with_capacity(c * tp);
    let mut argmax = Vec::with_capacity(c * tp);
    for ch in 0..c {
        let row = x.row(ch);
        for w in 0..tp {
            let start = w * s;
            let mut best = start;
            for idx in start + 1..start + k {
                if row[idx] > row[best] {
                    best = idx;
                }
            }
            out.push(row[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::from_raw(vec![c, tp], out), argmax))
}
