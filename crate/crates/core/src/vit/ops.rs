//! Fused CPU kernels with hand-written backward passes.
//!
//! candle's own fast softmax does not propagate gradients, and a layer norm
//! assembled from elementwise ops costs a dozen graph nodes per call, so both
//! are implemented here directly.

use candle_core::{CpuStorage, CustomOp1, CustomOp3, Layout, Shape, Tensor, WithDType, D};
use num_traits::Float;

fn contiguous<'a, T>(src: &'a [T], layout: &Layout, what: &str) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&src[a..b]),
        None => candle_core::bail!("{what}: input has to be contiguous"),
    }
}

/// Softmax over the last dimension.
struct RowSoftmax;

fn softmax_rows<T: WithDType + Float>(src: &[T], dims: &[usize]) -> (CpuStorage, Shape) {
    let n = dims[dims.len() - 1];
    let mut dst = vec![T::zero(); src.len()];
    for (s, d) in src.chunks_exact(n).zip(dst.chunks_exact_mut(n)) {
        let max = s.iter().copied().fold(T::neg_infinity(), Float::max);
        let mut sum = T::zero();
        for (x, y) in s.iter().zip(d.iter_mut()) {
            *y = (*x - max).exp();
            sum = sum + *y;
        }
        for y in d.iter_mut() {
            *y = *y / sum;
        }
    }
    (T::to_cpu_storage_owned(dst), Shape::from_dims(dims))
}

impl CustomOp1 for RowSoftmax {
    fn name(&self) -> &'static str {
        "row-softmax"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims();
        match storage {
            CpuStorage::F32(s) => Ok(softmax_rows(contiguous(s, layout, self.name())?, dims)),
            CpuStorage::F64(s) => Ok(softmax_rows(contiguous(s, layout, self.name())?, dims)),
            _ => candle_core::bail!("row-softmax: only f32 and f64 are supported"),
        }
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((res * grad_res.broadcast_sub(&dot)?)?))
    }
}

pub fn softmax_last_dim(xs: &Tensor) -> candle_core::Result<Tensor> {
    xs.contiguous()?.apply_op1(RowSoftmax)
}

/// Layer normalization over the last dimension with affine parameters.
struct LayerNormOp {
    eps: f64,
}

fn layer_norm_rows<T: WithDType + Float>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    dims: &[usize],
    eps: f64,
) -> (CpuStorage, Shape) {
    let n = dims[dims.len() - 1];
    let nf = T::from(n).unwrap();
    let eps = T::from(eps).unwrap();
    let mut dst = vec![T::zero(); x.len()];
    for (row, out) in x.chunks_exact(n).zip(dst.chunks_exact_mut(n)) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / nf;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
        let rstd = (var + eps).sqrt().recip();
        for j in 0..n {
            out[j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
    }
    (T::to_cpu_storage_owned(dst), Shape::from_dims(dims))
}

impl CustomOp3 for LayerNormOp {
    fn name(&self) -> &'static str {
        "layer-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims();
        let name = self.name();
        match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(b)) => Ok(layer_norm_rows(
                contiguous(x, l1, name)?,
                contiguous(g, l2, name)?,
                contiguous(b, l3, name)?,
                dims,
                self.eps,
            )),
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(b)) => Ok(layer_norm_rows(
                contiguous(x, l1, name)?,
                contiguous(g, l2, name)?,
                contiguous(b, l3, name)?,
                dims,
                self.eps,
            )),
            _ => candle_core::bail!("layer-norm: unsupported or mixed dtypes"),
        }
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let n = gamma.elem_count();
        let rows = x.elem_count() / n;
        let packed = x.apply_op3_no_bwd(gamma, &grad_res.contiguous()?, &LayerNormGrad { eps: self.eps })?;
        let dx = packed.narrow(0, 0, rows)?.reshape(x.shape())?;
        let dgamma = packed.narrow(0, rows, 1)?.reshape(n)?;
        let dbeta = packed.narrow(0, rows + 1, 1)?.reshape(n)?;
        Ok((Some(dx), Some(dgamma), Some(dbeta)))
    }
}

/// Gradients of [`LayerNormOp`], packed as `[dx rows; dgamma; dbeta]`.
struct LayerNormGrad {
    eps: f64,
}

fn layer_norm_grad_rows<T: WithDType + Float>(x: &[T], gamma: &[T], grad: &[T], n: usize, eps: f64) -> (CpuStorage, Shape) {
    let rows = x.len() / n;
    let nf = T::from(n).unwrap();
    let eps = T::from(eps).unwrap();
    let mut out = vec![T::zero(); (rows + 2) * n];
    let (dx_all, tail) = out.split_at_mut(rows * n);
    let (dgamma, dbeta) = tail.split_at_mut(n);
    let mut xhat = vec![T::zero(); n];
    for ((row, g), dx) in x.chunks_exact(n).zip(grad.chunks_exact(n)).zip(dx_all.chunks_exact_mut(n)) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / nf;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
        let rstd = (var + eps).sqrt().recip();
        let mut mean_gg = T::zero();
        let mut mean_ggx = T::zero();
        for j in 0..n {
            xhat[j] = (row[j] - mean) * rstd;
            let gg = g[j] * gamma[j];
            mean_gg = mean_gg + gg;
            mean_ggx = mean_ggx + gg * xhat[j];
            dgamma[j] = dgamma[j] + g[j] * xhat[j];
            dbeta[j] = dbeta[j] + g[j];
        }
        mean_gg = mean_gg / nf;
        mean_ggx = mean_ggx / nf;
        for j in 0..n {
            dx[j] = rstd * (g[j] * gamma[j] - mean_gg - xhat[j] * mean_ggx);
        }
    }
    (T::to_cpu_storage_owned(out), Shape::from_dims(&[rows + 2, n]))
}

impl CustomOp3 for LayerNormGrad {
    fn name(&self) -> &'static str {
        "layer-norm-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = l2.shape().elem_count();
        let name = self.name();
        match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(d)) => Ok(layer_norm_grad_rows(
                contiguous(x, l1, name)?,
                contiguous(g, l2, name)?,
                contiguous(d, l3, name)?,
                n,
                self.eps,
            )),
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(d)) => Ok(layer_norm_grad_rows(
                contiguous(x, l1, name)?,
                contiguous(g, l2, name)?,
                contiguous(d, l3, name)?,
                n,
                self.eps,
            )),
            _ => candle_core::bail!("layer-norm-grad: unsupported or mixed dtypes"),
        }
    }
}

pub fn layer_norm(xs: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> candle_core::Result<Tensor> {
    xs.contiguous()?.apply_op3(gamma, beta, LayerNormOp { eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn reference_layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Tensor {
        let mean = x.mean_keepdim(D::Minus1).unwrap();
        let xc = x.broadcast_sub(&mean).unwrap();
        let var = xc.sqr().unwrap().mean_keepdim(D::Minus1).unwrap();
        let xhat = xc.broadcast_div(&(var + 1e-5).unwrap().sqrt().unwrap()).unwrap();
        xhat.broadcast_mul(gamma).unwrap().broadcast_add(beta).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    #[test]
    fn softmax_matches_composite_forward_and_backward() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 2.0, (3, 4, 7), &dev).unwrap()).unwrap();
        let w = Tensor::randn(0f64, 1.0, (3, 4, 7), &dev).unwrap();
        let fast = softmax_last_dim(x.as_tensor()).unwrap();
        let slow = candle_nn::ops::softmax(x.as_tensor(), D::Minus1).unwrap();
        assert!(max_abs_diff(&fast, &slow) < 1e-12);
        let gf = (fast * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gs = (slow * &w).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(max_abs_diff(gf.get(&x).unwrap(), gs.get(&x).unwrap()) < 1e-12);
    }

    #[test]
    fn softmax_masks_negative_infinity() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[[1.0f32, f32::NEG_INFINITY, 2.0]], &dev).unwrap();
        let y = softmax_last_dim(&x).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(y[0][1], 0.0);
        assert!((y[0][0] + y[0][2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_matches_composite_forward_and_backward() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0.5f64, 2.0, (2, 5, 6), &dev).unwrap()).unwrap();
        let g = Var::from_tensor(&Tensor::randn(1f64, 0.3, 6, &dev).unwrap()).unwrap();
        let b = Var::from_tensor(&Tensor::randn(0f64, 0.3, 6, &dev).unwrap()).unwrap();
        let w = Tensor::randn(0f64, 1.0, (2, 5, 6), &dev).unwrap();
        let fast = layer_norm(x.as_tensor(), g.as_tensor(), b.as_tensor(), 1e-5).unwrap();
        let slow = reference_layer_norm(x.as_tensor(), g.as_tensor(), b.as_tensor());
        assert!(max_abs_diff(&fast, &slow) < 1e-12);
        let gf = (fast * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gs = (slow * &w).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &g, &b] {
            assert!(max_abs_diff(gf.get(v).unwrap(), gs.get(v).unwrap()) < 1e-10);
        }
        assert_eq!(x.dtype(), DType::F64);
    }
}
