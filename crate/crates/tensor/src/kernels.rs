//! Slice-level numeric kernels shared by the eager ops and the backward pass.
//!
//! Every kernel walks its inputs in a fixed order, so results are
//! bit-reproducible on a single thread. Row `i` of a matmul output depends
//! only on row `i` of the left operand.

use crate::LAYER_NORM_EPS;

#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub fn matmul_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub fn matmul_a_bt_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub fn matmul_at_b_acc(a: &[f32], g: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, grow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}

/// Row-wise softmax over rows of width `d`.
pub fn softmax_rows(x: &[f32], out: &mut [f32], d: usize) {
    let mut scratch = Vec::with_capacity(d);
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let max = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        scratch.clear();
        scratch.extend(xr.iter().map(|&v| ((v - max) as f64).exp()));
        let inv = 1.0 / scratch.iter().sum::<f64>();
        for (o, &e) in or.iter_mut().zip(scratch.iter()) {
            *o = (e * inv) as f32;
        }
    }
}

/// Row-wise log-softmax over rows of width `d`.
pub fn log_softmax_rows(x: &[f32], out: &mut [f32], d: usize) {
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let max = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = xr.iter().map(|&v| ((v - max) as f64).exp()).sum();
        let lse = sum.ln();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = ((v - max) as f64 - lse) as f32;
        }
    }
}

/// Row-wise layer normalization. Writes the normalized input to `xhat` and
/// the reciprocal standard deviation of each row to `rstd`.
pub fn layer_norm_rows(
    x: &[f32],
    gain: &[f32],
    bias: &[f32],
    out: &mut [f32],
    xhat: &mut [f32],
    rstd: &mut [f32],
) {
    let d = gain.len();
    for (r, ((xr, or), hr)) in x
        .chunks_exact(d)
        .zip(out.chunks_exact_mut(d))
        .zip(xhat.chunks_exact_mut(d))
        .enumerate()
    {
        let mean = xr.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = xr
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = rs as f32;
        for i in 0..d {
            let h = ((xr[i] as f64 - mean) * rs) as f32;
            hr[i] = h;
            or[i] = h * gain[i] + bias[i];
        }
    }
}
