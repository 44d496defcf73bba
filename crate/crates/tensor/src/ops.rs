use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Layout of a (possibly batched) matrix product.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Right operand is a single `[k, n]` matrix shared by every row.
    pub shared_rhs: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    let err = || TensorError::shape("matmul", a, b);
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let k = a[a.len() - 1];
    if b.len() == 2 {
        if b[0] != k {
            return Err(err());
        }
        let m: usize = a[..a.len() - 1].iter().product();
        let mut out = a.to_vec();
        *out.last_mut().unwrap() = b[1];
        return Ok((
            MatmulDims {
                batch: 1,
                m,
                k,
                n: b[1],
                shared_rhs: true,
            },
            out,
        ));
    }
    if a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] || b[b.len() - 2] != k {
        return Err(err());
    }
    let batch = a[..a.len() - 2].iter().product();
    let m = a[a.len() - 2];
    let n = b[b.len() - 1];
    let mut out = a.to_vec();
    *out.last_mut().unwrap() = n;
    Ok((
        MatmulDims {
            batch,
            m,
            k,
            n,
            shared_rhs: false,
        },
        out,
    ))
}

/// `b` must equal a trailing slice of `a`'s shape.
pub(crate) fn check_suffix(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(TensorError::shape(op, a, b));
    }
    Ok(())
}

/// Split a shape around two axes for transposition:
/// `(outer, len0, middle, len1, inner)`.
pub(crate) fn transpose_split(
    shape: &[usize],
    d0: usize,
    d1: usize,
) -> (usize, usize, usize, usize, usize) {
    let (d0, d1) = if d0 < d1 { (d0, d1) } else { (d1, d0) };
    (
        shape[..d0].iter().product(),
        shape[d0],
        shape[d0 + 1..d1].iter().product(),
        shape[d1],
        shape[d1 + 1..].iter().product(),
    )
}

pub(crate) fn transpose_data(
    src: &[f32],
    dst: &mut [f32],
    (outer, l0, mid, l1, inner): (usize, usize, usize, usize, usize),
) {
    // src is [outer, l0, mid, l1, inner]; dst is [outer, l1, mid, l0, inner]
    for o in 0..outer {
        for a in 0..l0 {
            for m in 0..mid {
                for b in 0..l1 {
                    let s = (((o * l0 + a) * mid + m) * l1 + b) * inner;
                    let d = (((o * l1 + b) * mid + m) * l0 + a) * inner;
                    dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
                }
            }
        }
    }
}

pub(crate) struct LayerNormOut {
    pub out: Tensor,
    pub xhat: Vec<f32>,
    pub rstd: Vec<f32>,
}

/// Keep-mask for dropout, already scaled by `1 / (1 - p)`.
pub(crate) fn dropout_mask(numel: usize, p: f32, seed: u64, stream: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let keep = 1.0 / (1.0 - p);
    (0..numel)
        .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
        .collect()
}

impl Tensor {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::shape("reshape", self.shape(), &shape));
        }
        Ok(Tensor::from_parts(shape, self.data().to_vec()))
    }

    /// Matrix product over the last two axes. The right operand is either a
    /// plain `[k, n]` matrix or has the same leading (batch) axes as `self`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (dims, shape) = matmul_dims(self.shape(), rhs.shape())?;
        let mut out = vec![0f32; shape.iter().product()];
        let MatmulDims { batch, m, k, n, .. } = dims;
        for bi in 0..batch {
            let rhs_off = if dims.shared_rhs { 0 } else { bi * k * n };
            kernels::matmul_acc(
                &self.data()[bi * m * k..(bi + 1) * m * k],
                &rhs.data()[rhs_off..rhs_off + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(Tensor::from_parts(shape, out))
    }

    /// Elementwise sum; `rhs` may match a trailing slice of `self`'s shape
    /// and is then repeated over the leading axes.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        check_suffix("add", self.shape(), rhs.shape())?;
        let r = rhs.data();
        let data = self
            .data()
            .chunks_exact(r.len().max(1))
            .flat_map(|c| c.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        Ok(Tensor::from_parts(self.shape().to_vec(), data))
    }

    /// Elementwise product with the same broadcasting rule as [`Tensor::add`].
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        check_suffix("mul", self.shape(), rhs.shape())?;
        let r = rhs.data();
        let data = self
            .data()
            .chunks_exact(r.len().max(1))
            .flat_map(|c| c.iter().zip(r).map(|(a, b)| a * b))
            .collect();
        Ok(Tensor::from_parts(self.shape().to_vec(), data))
    }

    pub fn scale(&self, c: f32) -> Tensor {
        Tensor::from_parts(
            self.shape().to_vec(),
            self.data().iter().map(|x| x * c).collect(),
        )
    }

    /// Swap two axes.
    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Tensor> {
        let nd = self.ndim();
        if d0 >= nd || d1 >= nd {
            return Err(TensorError::Invalid(format!(
                "transpose axes ({d0}, {d1}) out of range for shape {:?}",
                self.shape()
            )));
        }
        if d0 == d1 {
            return Ok(self.clone());
        }
        let mut shape = self.shape().to_vec();
        shape.swap(d0, d1);
        let mut out = vec![0f32; self.numel()];
        transpose_data(self.data(), &mut out, transpose_split(self.shape(), d0, d1));
        Ok(Tensor::from_parts(shape, out))
    }

    /// Concatenate along the last axis; all leading axes must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let lead = &first.shape()[..first.ndim().saturating_sub(1)];
        for p in parts {
            if p.ndim() != first.ndim() || &p.shape()[..p.ndim() - 1] != lead {
                return Err(TensorError::shape("concat", first.shape(), p.shape()));
            }
        }
        let rows = first.rows();
        let width: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(p.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        Ok(Tensor::from_parts(shape, out))
    }

    /// Embedding lookup: rows of a `[vocab, d]` table, shape `[ids.len(), d]`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(TensorError::Invalid(format!(
                "gather needs a 2-d table, got {:?}",
                self.shape()
            )));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Invalid(format!(
                    "gather index {id} out of range for table of {v} rows"
                )));
            }
            out.extend_from_slice(self.row(id));
        }
        Ok(Tensor::from_parts(vec![ids.len(), d], out))
    }

    pub fn softmax_last(&self) -> Tensor {
        let mut out = vec![0f32; self.numel()];
        kernels::softmax_rows(self.data(), &mut out, self.last_dim());
        Tensor::from_parts(self.shape().to_vec(), out)
    }

    pub fn log_softmax_last(&self) -> Tensor {
        let mut out = vec![0f32; self.numel()];
        kernels::log_softmax_rows(self.data(), &mut out, self.last_dim());
        Tensor::from_parts(self.shape().to_vec(), out)
    }

    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        Ok(self.layer_norm_full(gain, bias)?.out)
    }

    pub(crate) fn layer_norm_full(&self, gain: &Tensor, bias: &Tensor) -> Result<LayerNormOut> {
        let d = self.last_dim();
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(), gain.shape()));
        }
        let mut out = vec![0f32; self.numel()];
        let mut xhat = vec![0f32; self.numel()];
        let mut rstd = vec![0f32; self.rows()];
        kernels::layer_norm_rows(
            self.data(),
            gain.data(),
            bias.data(),
            &mut out,
            &mut xhat,
            &mut rstd,
        );
        Ok(LayerNormOut {
            out: Tensor::from_parts(self.shape().to_vec(), out),
            xhat,
            rstd,
        })
    }

    pub fn relu(&self) -> Tensor {
        Tensor::from_parts(
            self.shape().to_vec(),
            self.data().iter().map(|&x| x.max(0.0)).collect(),
        )
    }

    /// Replace entries where `mask` is true by `value`.
    pub fn masked_fill(&self, mask: &[bool], value: f32) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(TensorError::shape("masked_fill", self.shape(), &[mask.len()]));
        }
        Ok(Tensor::from_parts(
            self.shape().to_vec(),
            self.data()
                .iter()
                .zip(mask)
                .map(|(&x, &m)| if m { value } else { x })
                .collect(),
        ))
    }

    pub fn sum(&self) -> Tensor {
        Tensor::scalar(self.data().iter().map(|&x| x as f64).sum::<f64>() as f32)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        Tensor::scalar((self.data().iter().map(|&x| x as f64).sum::<f64>() / n) as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = t(&[2], &[0.0, 0.0]).softmax_last();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(eye.matmul(&a).unwrap(), a);
    }

    #[test]
    fn batched_matmul_matches_per_batch_products() {
        let a = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2, 1], &[1., 1., 2., 0.]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3., 6.]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let err = t(&[2, 3], &[0.; 6]).matmul(&t(&[2, 3], &[0.; 6])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn transpose_swaps_middle_axes() {
        let a = t(&[1, 2, 3, 1], &[0., 1., 2., 3., 4., 5.]);
        let b = a.transpose(1, 2).unwrap();
        assert_eq!(b.shape(), &[1, 3, 2, 1]);
        assert_eq!(b.data(), &[0., 3., 1., 4., 2., 5.]);
        assert_eq!(b.transpose(2, 1).unwrap(), a);
    }

    #[test]
    fn add_broadcasts_trailing_shape() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2], &[10., 20.]);
        assert_eq!(a.add(&b).unwrap().data(), &[11., 22., 13., 24.]);
        assert!(a.add(&t(&[3], &[0.; 3])).is_err());
    }

    #[test]
    fn masked_entries_get_zero_probability() {
        let x = t(&[1, 3], &[0.3, -0.2, 5.0]);
        let m = x.masked_fill(&[false, false, true], crate::MASK_VALUE).unwrap();
        let s = m.softmax_last();
        assert_eq!(s.data()[2], 0.0);
        let total: f32 = s.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn concat_and_gather() {
        let a = t(&[2, 1], &[1., 2.]);
        let b = t(&[2, 2], &[3., 4., 5., 6.]);
        let c = Tensor::concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1., 3., 4., 2., 5., 6.]);
        let g = b.gather_rows(&[1, 1, 0]).unwrap();
        assert_eq!(g.data(), &[5., 6., 5., 6., 3., 4.]);
        assert!(b.gather_rows(&[2]).is_err());
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let x = t(&[2, 4], &[1., 2., 3., 4., -1., 0., 0., 1.]);
        let y = x
            .layer_norm(&Tensor::full([4], 1.0), &Tensor::zeros([4]))
            .unwrap();
        for r in 0..2 {
            let row = y.row(r);
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_mask_is_reproducible_per_stream() {
        let a = dropout_mask(64, 0.5, 7, 3);
        assert_eq!(a, dropout_mask(64, 0.5, 7, 3));
        assert_ne!(a, dropout_mask(64, 0.5, 7, 4));
        assert!(a.iter().all(|&m| m == 0.0 || m == 2.0));
    }
}
