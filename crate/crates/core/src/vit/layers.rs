use candle_core::{DType, Device, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops;
use crate::error::Result;

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

/// Seeded parameter factory.
pub(crate) struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub dtype: DType,
    pub device: &'a Device,
}

impl Init<'_> {
    fn var(&self, data: Vec<f64>, shape: impl Into<Shape>) -> Result<Var> {
        let t = Tensor::from_vec(data, shape, self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Normal with standard deviation `std`, resampled outside two deviations.
    pub fn trunc_normal(&mut self, shape: impl Into<Shape>, std: f64) -> Result<Var> {
        let shape = shape.into();
        let data = (0..shape.elem_count())
            .map(|_| loop {
                let z: f64 = self.rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect();
        self.var(data, shape)
    }

    pub fn normal(&mut self, shape: impl Into<Shape>, std: f64) -> Result<Var> {
        let shape = shape.into();
        let data = (0..shape.elem_count())
            .map(|_| self.rng.sample::<f64, _>(StandardNormal) * std)
            .collect();
        self.var(data, shape)
    }

    /// Uniform on `[-bound, bound)`.
    pub fn uniform(&mut self, shape: impl Into<Shape>, bound: f64) -> Result<Var> {
        let shape = shape.into();
        let data = (0..shape.elem_count()).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.var(data, shape)
    }

    pub fn constant(&self, shape: impl Into<Shape>, value: f64) -> Result<Var> {
        let shape = shape.into();
        self.var(vec![value; shape.elem_count()], shape)
    }
}

/// Affine map `x·W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub(crate) weight: Var,
    pub(crate) bias: Var,
}

impl Linear {
    pub(crate) fn new(init: &mut Init<'_>, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            weight: init.trunc_normal((fan_in, fan_out), INIT_STD)?,
            bias: init.constant(fan_out, 0.0)?,
        })
    }

    /// Weights and bias uniform on `±1/√fan_in`, the usual dense-layer
    /// default outside the transformer.
    pub(crate) fn new_uniform(init: &mut Init<'_>, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: init.uniform((fan_in, fan_out), bound)?,
            bias: init.uniform(fan_out, bound)?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let dims = xs.dims();
        let fan_in = dims[dims.len() - 1];
        let rows = xs.elem_count() / fan_in;
        let out = xs
            .reshape((rows, fan_in))?
            .matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?;
        let mut out_dims = dims.to_vec();
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(out.reshape(out_dims)?)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub(crate) gamma: Var,
    pub(crate) beta: Var,
}

impl LayerNorm {
    pub(crate) fn new(init: &mut Init<'_>, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(dim, 1.0)?,
            beta: init.constant(dim, 0.0)?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        Ok(ops::layer_norm(xs, self.gamma.as_tensor(), self.beta.as_tensor(), LN_EPS)?)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub(crate) ln1: LayerNorm,
    pub(crate) qkv: Linear,
    pub(crate) proj: Linear,
    pub(crate) ln2: LayerNorm,
    pub(crate) fc1: Linear,
    pub(crate) fc2: Linear,
    num_heads: usize,
}

impl EncoderBlock {
    pub(crate) fn new(init: &mut Init<'_>, dim: usize, num_heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(init, dim)?,
            qkv: Linear::new(init, dim, 3 * dim)?,
            proj: Linear::new(init, dim, dim)?,
            ln2: LayerNorm::new(init, dim)?,
            fc1: Linear::new(init, dim, dim * mlp_ratio)?,
            fc2: Linear::new(init, dim * mlp_ratio, dim)?,
            num_heads,
        })
    }

    /// Row-stochastic attention matrices `(B, heads, L, L)` for the block input.
    ///
    /// `key_bias` is an additive `(L,)` term on the attention logits; `-inf`
    /// entries make the corresponding keys invisible to every query.
    pub fn attention_weights(&self, xs: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let (q, k, _) = self.qkv_heads(&self.ln1.forward(xs)?)?;
        self.attention_probs(&q, &k, key_bias)
    }

    fn qkv_heads(&self, normed: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, l, d) = normed.dims3()?;
        let h = self.num_heads;
        let qkv = self
            .qkv
            .forward(normed)?
            .reshape((b, l, 3, h, d / h))?
            .permute((2, 0, 3, 1, 4))?;
        Ok((
            qkv.get(0)?.contiguous()?,
            qkv.get(1)?.contiguous()?,
            qkv.get(2)?.contiguous()?,
        ))
    }

    fn attention_probs(&self, q: &Tensor, k: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let head_dim = q.dim(D::Minus1)?;
        let mut logits = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (head_dim as f64).sqrt()))?;
        if let Some(bias) = key_bias {
            logits = logits.broadcast_add(bias)?;
        }
        Ok(ops::softmax_last_dim(&logits)?)
    }

    pub fn forward(&self, xs: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, l, d) = xs.dims3()?;
        let (q, k, v) = self.qkv_heads(&self.ln1.forward(xs)?)?;
        let att = self.attention_probs(&q, &k, key_bias)?;
        let mixed = att.matmul(&v)?.transpose(1, 2)?.reshape((b, l, d))?;
        let xs = (xs + self.proj.forward(&mixed)?)?;
        let hidden = self.fc1.forward(&self.ln2.forward(&xs)?)?.gelu_erf()?;
        Ok((&xs + self.fc2.forward(&hidden)?)?)
    }
}
