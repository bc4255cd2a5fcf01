//! Domain prompts and the prompt adapter.
//!
//! Each domain prompt is the shared prompt modulated elementwise by a
//! rank-one matrix, `P_m = P* ⊙ (u_m v_mᵀ)`, so domains share most of their
//! parameters through `P*` while `u_m` and `v_m` carry what is specific to
//! domain `m`. The adapter maps a promptless image feature to convex weights
//! over the domain prompts; their weighted sum is the prompt used for images
//! of unknown domain.
//!
//! Domain indices are zero-based and follow [`ArtifactKind`] ordinals.
//!
//! [`ArtifactKind`]: crate::synth::ArtifactKind

use candle_core::{Tensor, Var};

use crate::error::{EpvtError, Result};
use crate::vit::layers::{Init, Linear, INIT_STD};
use crate::vit::{ops, FactorInit, ModelConfig};

/// Tolerance on `Σ w = 1` accepted by [`PromptBank::adapted_prompt`].
pub const SIMPLEX_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct PromptBank {
    pub(crate) shared: Var,
    pub(crate) u: Vec<Var>,
    pub(crate) v: Vec<Var>,
}

impl PromptBank {
    pub(crate) fn new(init: &mut Init<'_>, config: &ModelConfig) -> Result<Self> {
        let (s, d) = (config.prompt_len, config.embed_dim);
        let shared = init.trunc_normal((s, d), INIT_STD)?;
        let mut u = Vec::with_capacity(config.num_domains);
        let mut v = Vec::with_capacity(config.num_domains);
        for _ in 0..config.num_domains {
            match config.factor_init {
                FactorInit::Ones => {
                    u.push(init.constant(s, 1.0)?);
                    v.push(init.constant(d, 1.0)?);
                }
                FactorInit::Normal => {
                    u.push(init.normal(s, 1.0)?);
                    v.push(init.normal(d, 1.0)?);
                }
            }
        }
        Ok(Self { shared, u, v })
    }

    pub fn num_domains(&self) -> usize {
        self.u.len()
    }

    pub fn shared(&self) -> &Var {
        &self.shared
    }

    pub fn factors(&self, m: usize) -> Result<(&Var, &Var)> {
        self.check_index(m)?;
        Ok((&self.u[m], &self.v[m]))
    }

    fn check_index(&self, m: usize) -> Result<()> {
        if m >= self.num_domains() {
            return Err(EpvtError::IndexOutOfRange {
                what: "domain prompts",
                index: m,
                len: self.num_domains(),
            });
        }
        Ok(())
    }

    /// The rank-one modulation `u_m v_mᵀ`, shape `(s, d)`.
    pub fn rank_one(&self, m: usize) -> Result<Tensor> {
        self.check_index(m)?;
        let u = self.u[m].as_tensor().unsqueeze(1)?;
        let v = self.v[m].as_tensor().unsqueeze(0)?;
        Ok(u.matmul(&v)?)
    }

    /// `P_m = P* ⊙ (u_m v_mᵀ)`, shape `(s, d)`.
    pub fn domain_prompt(&self, m: usize) -> Result<Tensor> {
        self.check_index(m)?;
        let u = self.u[m].as_tensor().unsqueeze(1)?;
        let v = self.v[m].as_tensor().unsqueeze(0)?;
        Ok(self.shared.as_tensor().broadcast_mul(&u)?.broadcast_mul(&v)?)
    }

    /// All domain prompts stacked as `(M, s, d)`.
    pub fn all_domain_prompts(&self) -> Result<Tensor> {
        let prompts = (0..self.num_domains())
            .map(|m| self.domain_prompt(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&prompts, 0)?)
    }

    /// Per-sample domain prompts `(B, s, d)` for the given domain indices.
    pub fn prompts_for_domains(&self, domains: &[usize]) -> Result<Tensor> {
        for &m in domains {
            self.check_index(m)?;
        }
        let all = self.all_domain_prompts()?;
        let (m, s, d) = all.dims3()?;
        let idx: Vec<u32> = domains.iter().map(|&x| x as u32).collect();
        let idx = Tensor::from_vec(idx, domains.len(), all.device())?;
        Ok(all.reshape((m, s * d))?.index_select(&idx, 0)?.reshape((domains.len(), s, d))?)
    }

    /// `Σ_m w_m P_m` for each row of `weights` `(B, M)`, giving `(B, s, d)`.
    ///
    /// Rows must lie on the simplex within [`SIMPLEX_TOL`].
    pub fn adapted_prompt(&self, weights: &Tensor) -> Result<Tensor> {
        let (b, m) = weights.dims2()?;
        if m != self.num_domains() {
            return Err(EpvtError::Dimension(format!(
                "weights have {m} columns for {} domain prompts",
                self.num_domains()
            )));
        }
        check_simplex(weights)?;
        let all = self.all_domain_prompts()?;
        let (_, s, d) = all.dims3()?;
        Ok(weights.matmul(&all.reshape((m, s * d))?)?.reshape((b, s, d))?)
    }
}

/// Fails unless every row of `weights` is nonnegative and sums to one within
/// [`SIMPLEX_TOL`].
pub fn check_simplex(weights: &Tensor) -> Result<()> {
    let rows = weights.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?;
    for row in rows {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&w| w < -SIMPLEX_TOL) {
            return Err(EpvtError::SimplexViolation { sum });
        }
    }
    Ok(())
}

/// Two-layer MLP with a softmax output: feature `(B, d)` → weights `(B, M)`.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub(crate) hidden: Linear,
    pub(crate) out: Linear,
}

impl Adapter {
    pub(crate) fn new(init: &mut Init<'_>, config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new_uniform(init, config.embed_dim, config.adapter_hidden)?,
            out: Linear::new_uniform(init, config.adapter_hidden, config.num_domains)?,
        })
    }

    pub fn hidden_layer(&self) -> &Linear {
        &self.hidden
    }

    pub fn output_layer(&self) -> &Linear {
        &self.out
    }

    /// Pre-softmax scores `(B, M)`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.hidden.forward(features)?.relu()?;
        self.out.forward(&h)
    }

    pub fn weights(&self, features: &Tensor) -> Result<Tensor> {
        Ok(ops::softmax_last_dim(&self.logits(features)?)?)
    }
}

/// Softmax of explicit logits, exposed for adapter-level checks.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    Ok(ops::softmax_last_dim(logits)?)
}
