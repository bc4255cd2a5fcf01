#![allow(dead_code)]

use candle_core::{DType, Tensor, Var};
use epvt::objectives::{Batch, MixupPlan};
use epvt::synth::{apply_artifact, render_base_lesion, ArtifactKind, ImageRecord};
use epvt::vit::{EpvtModel, FactorInit, ModelConfig};

/// Small rendered image with the given label and overlay.
pub fn image(seed: u64, label: u8, kind: ArtifactKind, size: usize) -> ImageRecord {
    let base = render_base_lesion(seed, label, size).unwrap();
    apply_artifact(&base, kind, seed ^ 0x55).unwrap()
}

/// Tiny f64 model; `normal` factors break the symmetry between domains.
pub fn tiny_model(seed: u64, normal_factors: bool) -> EpvtModel {
    let mut cfg = ModelConfig::tiny();
    if normal_factors {
        cfg.factor_init = FactorInit::Normal;
    }
    EpvtModel::new(&cfg, DType::F64, seed).unwrap()
}

/// Six 16×16 images over the three tiny-config domains, both labels present.
pub fn tiny_records(seed: u64) -> Vec<ImageRecord> {
    let kinds = [ArtifactKind::DarkCorner, ArtifactKind::Hair, ArtifactKind::GelBubble];
    (0..6)
        .map(|i| image(seed * 100 + i as u64, (i % 2) as u8, kinds[i % 3], 16))
        .collect()
}

pub fn tiny_batch(model: &EpvtModel, seed: u64) -> Batch {
    let records = tiny_records(seed);
    let refs: Vec<&ImageRecord> = records.iter().collect();
    Batch::from_records(model, &refs).unwrap()
}

/// Fixed cross-domain plan for [`tiny_batch`] (domains 0,1,2,0,1,2).
pub fn tiny_plan() -> MixupPlan {
    MixupPlan {
        partners: vec![1, 2, 0, 4, 5, 3],
        lambdas: vec![0.3, 0.8, 0.55, 0.1, 0.65, 0.42],
    }
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn set_entry(var: &Var, base: &[f64], k: usize, value: f64) {
    let mut data = base.to_vec();
    data[k] = value;
    let t = Tensor::from_vec(data, var.shape(), var.device()).unwrap();
    var.set(&t).unwrap();
}

/// Central difference `∂f/∂var[k]` with step `h`; restores the variable.
pub fn central_difference(var: &Var, k: usize, h: f64, f: &dyn Fn() -> f64) -> f64 {
    let base = flat(var.as_tensor());
    set_entry(var, &base, k, base[k] + h);
    let up = f();
    set_entry(var, &base, k, base[k] - h);
    let down = f();
    set_entry(var, &base, k, base[k]);
    (up - down) / (2.0 * h)
}

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is at round-off level compare on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Entry indices to probe: the largest-magnitude gradient entries plus an
/// evenly spaced sample, at most `limit` in total.
pub fn probe_indices(grad: &[f64], limit: usize) -> Vec<usize> {
    if grad.len() <= limit {
        return (0..grad.len()).collect();
    }
    let mut by_mag: Vec<usize> = (0..grad.len()).collect();
    by_mag.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    let mut out: Vec<usize> = by_mag[..limit / 2].to_vec();
    let stride = grad.len() / (limit - limit / 2);
    out.extend((0..grad.len()).step_by(stride.max(1)).take(limit - limit / 2));
    out.sort();
    out.dedup();
    out
}
