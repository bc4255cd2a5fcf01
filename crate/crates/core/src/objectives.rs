//! Training objectives.
//!
//! EPVT minimizes `L_mixup + L_adapted_ce + λ_w · L_weight_sup`:
//!
//! - `L_mixup` blends every image with an image of another domain and scores
//!   the blend against both labels with the blend coefficient as weight.
//! - `L_adapted_ce` classifies each image through the prompt the adapter
//!   composes from its promptless feature, as at inference time.
//! - `L_weight_sup` pushes the adapter weight of the image's own domain to one
//!   and all others to zero.
//!
//! The ERM baseline is plain cross-entropy on the promptless feature.

use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{EpvtError, Result};
use crate::prompt::check_simplex;
use crate::synth::ImageRecord;
use crate::vit::EpvtModel;

/// Probabilities entering a log are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Which prompt the mixed image is classified with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixupPrompt {
    /// The domain prompt of the first (anchor) image of the pair.
    Anchor,
    /// The adapter's prompt for the mixed image itself.
    Adapted,
}

impl MixupPrompt {
    pub fn as_str(self) -> &'static str {
        match self {
            MixupPrompt::Anchor => "anchor",
            MixupPrompt::Adapted => "adapted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "anchor" => Ok(MixupPrompt::Anchor),
            "adapted" => Ok(MixupPrompt::Adapted),
            other => Err(EpvtError::InvalidConfig(format!("unknown mixup_prompt `{other}`"))),
        }
    }
}

/// Loss-shape settings shared by training and the gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda_w: f64,
    pub mixup_alpha: f64,
    pub mixup_prompt: MixupPrompt,
    /// Stop gradients from the adapter into the promptless feature.
    pub adapter_detach: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_w: 1.0,
            mixup_alpha: 0.3,
            mixup_prompt: MixupPrompt::Anchor,
            adapter_detach: true,
        }
    }
}

/// `−log softmax(logits)[target]`, evaluated stably.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(EpvtError::Dimension(format!("cross-entropy needs at least 2 classes, got {}", logits.len())));
    }
    if target >= logits.len() {
        return Err(EpvtError::IndexOutOfRange {
            what: "class logits",
            index: target,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}

/// Binary cross-entropy of probability `p` against target `y ∈ [0, 1]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Per-sample cross-entropy `(B,)` of `logits` `(B, C)` against soft targets
/// `(B, C)` whose rows sum to one.
pub fn soft_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let log_p = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    Ok((log_p * targets)?.sum(D::Minus1)?.neg()?)
}

/// Mean cross-entropy of `logits` `(B, C)` against class indices.
pub fn cross_entropy_mean(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if targets.len() != b {
        return Err(EpvtError::Dimension(format!("{} targets for {b} logit rows", targets.len())));
    }
    let onehot = one_hot(targets, c, logits.dtype(), logits.device())?;
    Ok(soft_cross_entropy(logits, &onehot)?.mean_all()?)
}

pub(crate) fn one_hot(indices: &[usize], n: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut data = vec![0f64; indices.len() * n];
    for (row, &k) in indices.iter().enumerate() {
        if k >= n {
            return Err(EpvtError::IndexOutOfRange {
                what: "classes",
                index: k,
                len: n,
            });
        }
        data[row * n + k] = 1.0;
    }
    Ok(Tensor::from_vec(data, (indices.len(), n), device)?.to_dtype(dtype)?)
}

/// `λ·x_i + (1 − λ)·x_j` elementwise over two equally sized images.
pub fn mixup_sample(x_i: &ImageRecord, x_j: &ImageRecord, lambda: f64) -> Result<Vec<f32>> {
    if x_i.size != x_j.size || x_i.pixels.len() != x_j.pixels.len() {
        return Err(EpvtError::Dimension(format!(
            "cannot mix a {}×{} image with a {}×{} image",
            x_i.size, x_i.size, x_j.size, x_j.size
        )));
    }
    check_lambda(lambda)?;
    let (a, b) = (lambda as f32, (1.0 - lambda) as f32);
    Ok(x_i.pixels.iter().zip(&x_j.pixels).map(|(p, q)| a * p + b * q).collect())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(EpvtError::InvalidConfig(format!("mixup coefficient {lambda} is outside [0, 1]")));
    }
    Ok(())
}

/// Two images from different domains and their blend coefficient.
#[derive(Debug, Clone, Copy)]
pub struct MixupPair<'a> {
    pub x_i: &'a ImageRecord,
    pub x_j: &'a ImageRecord,
    pub lambda: f64,
    pub anchor_domain: usize,
}

impl<'a> MixupPair<'a> {
    pub fn new(x_i: &'a ImageRecord, x_j: &'a ImageRecord, lambda: f64) -> Result<Self> {
        if x_i.domain == x_j.domain {
            return Err(EpvtError::DegenerateBatch(format!(
                "mixup pair shares its domain ({})",
                x_i.domain
            )));
        }
        check_lambda(lambda)?;
        Ok(Self {
            x_i,
            x_j,
            lambda,
            anchor_domain: x_i.domain.index(),
        })
    }
}

/// One labelled mini-batch as model-ready tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(B, S, S, 3)` images.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

impl Batch {
    pub fn from_records(model: &EpvtModel, records: &[&ImageRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(EpvtError::DegenerateBatch("batch is empty".into()));
        }
        Ok(Self {
            images: model.images_to_tensor(records)?,
            labels: records.iter().map(|r| r.label as usize).collect(),
            domains: records.iter().map(|r| r.domain.index()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Partner index and blend coefficient for every batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupPlan {
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl MixupPlan {
    /// Pairs each element with a uniformly drawn element of a different
    /// domain and draws `λ ~ Beta(α, α)` per pair.
    pub fn sample<R: Rng + ?Sized>(domains: &[usize], alpha: f64, rng: &mut R) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(EpvtError::InvalidConfig(format!("mixup_alpha must be positive, got {alpha}")));
        }
        let beta = Beta::new(alpha, alpha).map_err(|e| EpvtError::InvalidConfig(e.to_string()))?;
        let mut partners = Vec::with_capacity(domains.len());
        let mut lambdas = Vec::with_capacity(domains.len());
        for &d in domains {
            let others: Vec<usize> = (0..domains.len()).filter(|&j| domains[j] != d).collect();
            if others.is_empty() {
                return Err(EpvtError::DegenerateBatch(
                    "mixup needs at least two domains in the batch".into(),
                ));
            }
            partners.push(others[rng.random_range(0..others.len())]);
            lambdas.push(beta.sample(rng));
        }
        Ok(Self { partners, lambdas })
    }

    pub fn validate(&self, domains: &[usize]) -> Result<()> {
        if self.partners.len() != domains.len() || self.lambdas.len() != domains.len() {
            return Err(EpvtError::Dimension(format!(
                "mixup plan covers {} elements, batch has {}",
                self.partners.len(),
                domains.len()
            )));
        }
        for (i, (&j, &lambda)) in self.partners.iter().zip(&self.lambdas).enumerate() {
            if j >= domains.len() {
                return Err(EpvtError::IndexOutOfRange {
                    what: "batch",
                    index: j,
                    len: domains.len(),
                });
            }
            if domains[i] == domains[j] {
                return Err(EpvtError::DegenerateBatch(format!(
                    "mixup partners {i} and {j} share domain {}",
                    domains[i]
                )));
            }
            check_lambda(lambda)?;
        }
        Ok(())
    }
}

/// Mixup loss for a single pair.
pub fn mixup_loss(model: &EpvtModel, pair: &MixupPair<'_>, cfg: &ObjectiveConfig) -> Result<Tensor> {
    let records = [pair.x_i, pair.x_j];
    let batch = Batch::from_records(model, &records)?;
    let plan = MixupPlan {
        partners: vec![1],
        lambdas: vec![pair.lambda],
    };
    // Score only the first element: it is the pair's anchor.
    mixup_terms(model, &batch, &plan, cfg, Some(1))
}

/// Mean mixup loss over a batch with an explicit plan.
pub fn mixup_loss_batch(model: &EpvtModel, batch: &Batch, plan: &MixupPlan, cfg: &ObjectiveConfig) -> Result<Tensor> {
    plan.validate(&batch.domains)?;
    mixup_terms(model, batch, plan, cfg, None)
}

fn mixup_terms(
    model: &EpvtModel,
    batch: &Batch,
    plan: &MixupPlan,
    cfg: &ObjectiveConfig,
    take: Option<usize>,
) -> Result<Tensor> {
    let n = take.unwrap_or(batch.len());
    let dev = model.device();
    let dtype = model.dtype();
    let lambdas = Tensor::from_vec(plan.lambdas[..n].to_vec(), (n, 1, 1, 1), dev)?.to_dtype(dtype)?;
    let idx: Vec<u32> = plan.partners[..n].iter().map(|&j| j as u32).collect();
    let idx = Tensor::from_vec(idx, n, dev)?;
    let x_i = batch.images.narrow(0, 0, n)?;
    let x_j = batch.images.index_select(&idx, 0)?;
    let one_minus = lambdas.affine(-1.0, 1.0)?;
    let x_mix = (x_i.broadcast_mul(&lambdas)? + x_j.broadcast_mul(&one_minus)?)?;

    let prompt = match cfg.mixup_prompt {
        MixupPrompt::Anchor => model.prompts().prompts_for_domains(&batch.domains[..n])?,
        MixupPrompt::Adapted => {
            let w = adapter_weights_for(model, &x_mix, cfg.adapter_detach)?;
            model.prompts().adapted_prompt(&w)?
        }
    };
    let logits = model.classify(&model.forward_with_prompt(&x_mix, &prompt)?)?;

    let c = model.config().num_classes;
    let mut targets = vec![0f64; n * c];
    for i in 0..n {
        let j = plan.partners[i];
        let lambda = plan.lambdas[i];
        targets[i * c + batch.labels[i]] += lambda;
        targets[i * c + batch.labels[j]] += 1.0 - lambda;
    }
    let targets = Tensor::from_vec(targets, (n, c), dev)?.to_dtype(dtype)?;
    Ok(soft_cross_entropy(&logits, &targets)?.mean_all()?)
}

fn adapter_weights_for(model: &EpvtModel, images: &Tensor, detach: bool) -> Result<Tensor> {
    let mut f0 = model.forward_plain(images)?;
    if detach {
        f0 = f0.detach();
    }
    model.adapter_weights(&f0)
}

/// Weight supervision for one weight vector:
/// `(1/M)·[bce(w_m, 1) + Σ_{t≠m} bce(w_t, 0)]`.
pub fn weight_supervision(w: &[f64], true_domain: usize) -> Result<f64> {
    let m = w.len();
    if true_domain >= m {
        return Err(EpvtError::IndexOutOfRange {
            what: "domain weights",
            index: true_domain,
            len: m,
        });
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > crate::prompt::SIMPLEX_TOL || w.iter().any(|&x| x < -crate::prompt::SIMPLEX_TOL) {
        return Err(EpvtError::SimplexViolation { sum });
    }
    let total: f64 = w
        .iter()
        .enumerate()
        .map(|(t, &wt)| bce(wt, if t == true_domain { 1.0 } else { 0.0 }))
        .sum();
    Ok(total / m as f64)
}

/// Batch mean of [`weight_supervision`] for weights `(B, M)`.
pub fn weight_supervision_batch(weights: &Tensor, domains: &[usize]) -> Result<Tensor> {
    let (b, m) = weights.dims2()?;
    if domains.len() != b {
        return Err(EpvtError::Dimension(format!("{} domain labels for {b} weight rows", domains.len())));
    }
    check_simplex(weights)?;
    let target = one_hot(domains, m, weights.dtype(), weights.device())?;
    let w = weights.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let pos = (&target * w.log()?)?;
    let neg = (target.affine(-1.0, 1.0)? * w.affine(-1.0, 1.0)?.log()?)?;
    Ok(((pos + neg)?.sum(D::Minus1)?.neg()? / m as f64)?.mean_all()?)
}

/// Outputs of the adapted-prompt path.
#[derive(Debug, Clone)]
pub struct AdaptedTerms {
    /// Mean cross-entropy through the adapted prompt.
    pub ce: Tensor,
    /// Mean weight supervision, before multiplying by `λ_w`.
    pub weight_sup: Tensor,
    /// Adapter weights `(B, M)`.
    pub weights: Tensor,
}

impl AdaptedTerms {
    /// `ce + λ_w · weight_sup`.
    pub fn loss(&self, lambda_w: f64) -> Result<Tensor> {
        Ok((&self.ce + (&self.weight_sup * lambda_w)?)?)
    }
}

/// Runs each image through `forward_plain → adapter → adapted prompt →
/// forward_with_prompt → head`.
pub fn adapted_loss(model: &EpvtModel, batch: &Batch, cfg: &ObjectiveConfig) -> Result<AdaptedTerms> {
    let weights = adapter_weights_for(model, &batch.images, cfg.adapter_detach)?;
    let prompt = model.prompts().adapted_prompt(&weights)?;
    let logits = model.classify(&model.forward_with_prompt(&batch.images, &prompt)?)?;
    Ok(AdaptedTerms {
        ce: cross_entropy_mean(&logits, &batch.labels)?,
        weight_sup: weight_supervision_batch(&weights, &batch.domains)?,
        weights,
    })
}

/// Scalar loss values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_mixup: f64,
    pub l_adapted_ce: f64,
    pub l_weight_sup: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_mixup, self.l_adapted_ce, self.l_weight_sup, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Differentiable loss terms together with their scalar report.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub mixup: Tensor,
    pub adapted_ce: Tensor,
    pub weight_sup: Tensor,
    pub total: Tensor,
    pub report: LossReport,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `L_total = L_mixup + L_adapted_ce + λ_w · L_weight_sup` for one batch.
pub fn total_loss(model: &EpvtModel, batch: &Batch, plan: &MixupPlan, cfg: &ObjectiveConfig) -> Result<LossTerms> {
    if batch.domains.iter().all(|&d| d == batch.domains[0]) {
        return Err(EpvtError::DegenerateBatch(
            "batch holds a single domain, so mixup pairs cannot form".into(),
        ));
    }
    let mixup = mixup_loss_batch(model, batch, plan, cfg)?;
    let adapted = adapted_loss(model, batch, cfg)?;
    let total = ((&mixup + &adapted.ce)? + (&adapted.weight_sup * cfg.lambda_w)?)?;
    let report = LossReport {
        l_mixup: scalar(&mixup)?,
        l_adapted_ce: scalar(&adapted.ce)?,
        l_weight_sup: scalar(&adapted.weight_sup)?,
        l_total: scalar(&total)?,
    };
    Ok(LossTerms {
        mixup,
        adapted_ce: adapted.ce,
        weight_sup: adapted.weight_sup,
        total,
        report,
    })
}

/// Plain cross-entropy on the promptless feature. The value is reported as
/// `l_adapted_ce` and `l_total`; the other terms are zero.
pub fn erm_loss(model: &EpvtModel, batch: &Batch) -> Result<LossTerms> {
    let logits = model.classify(&model.forward_plain(&batch.images)?)?;
    let ce = cross_entropy_mean(&logits, &batch.labels)?;
    let zero = ce.zeros_like()?;
    let value = scalar(&ce)?;
    Ok(LossTerms {
        mixup: zero.clone(),
        adapted_ce: ce.clone(),
        weight_sup: zero,
        total: ce,
        report: LossReport {
            l_mixup: 0.0,
            l_adapted_ce: value,
            l_weight_sup: 0.0,
            l_total: value,
        },
    })
}
