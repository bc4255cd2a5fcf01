//! Bias-controlled "trap" splits.
//!
//! In the training split artifacts co-occur with the melanoma label at the
//! requested strength; in the test split the association is reversed, so a
//! model that learned the shortcut is penalised.

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{record_id, DatasetManifest, RecordRef, Split};
use super::ArtifactKind;
use crate::error::{EpvtError, Result};
use crate::rng::{derive, rng_from};

pub const MIN_TRAP_SPLIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TrapSplitSpec {
    pub bias_degree: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub image_size: usize,
}

impl TrapSplitSpec {
    pub fn new(bias_degree: f64, n_train: usize, n_test: usize, seed: u64) -> Self {
        Self {
            bias_degree,
            n_train,
            n_test,
            seed,
            image_size: 32,
        }
    }
}

/// Builds a train/test pair whose artifact–label association is `+bias` and
/// `-bias` respectively.
///
/// Labels are split evenly and the number of artifact-bearing images in each
/// class is fixed, so P(artifact | 1) − P(artifact | 0) hits the target up to
/// rounding. The artifact kind of a "present" record is uniform over the four
/// overlay kinds.
pub fn build_trap_split(spec: &TrapSplitSpec) -> Result<(DatasetManifest, DatasetManifest)> {
    let b = spec.bias_degree;
    if !(0.0..=1.0).contains(&b) || b.is_nan() {
        return Err(EpvtError::InvalidConfig(format!("bias degree {b} outside [0, 1]")));
    }
    if spec.n_train < MIN_TRAP_SPLIT || spec.n_test < MIN_TRAP_SPLIT {
        return Err(EpvtError::InvalidConfig(format!(
            "trap splits need at least {MIN_TRAP_SPLIT} records each (got {} / {})",
            spec.n_train, spec.n_test
        )));
    }
    let train = trap_records(spec, Split::Train, spec.n_train, b)?;
    let test = trap_records(spec, Split::Test, spec.n_test, -b)?;
    Ok((train, test))
}

fn trap_records(spec: &TrapSplitSpec, split: Split, n: usize, signed_bias: f64) -> Result<DatasetManifest> {
    let split_seed = derive(spec.seed, split as u64 + 1);
    let mut rng = rng_from(derive(split_seed, 0x7A9));
    let n_pos = n / 2;
    let n_neg = n - n_pos;
    let p_art_pos = (1.0 + signed_bias) / 2.0;
    let p_art_neg = (1.0 - signed_bias) / 2.0;
    let art_pos = (n_pos as f64 * p_art_pos).round() as usize;
    let art_neg = (n_neg as f64 * p_art_neg).round() as usize;

    let mut rows: Vec<(u8, bool)> = Vec::with_capacity(n);
    rows.extend((0..n_pos).map(|i| (1u8, i < art_pos)));
    rows.extend((0..n_neg).map(|i| (0u8, i < art_neg)));
    rows.shuffle(&mut rng);

    let records = rows
        .into_iter()
        .enumerate()
        .map(|(index, (label, artifact))| {
            let domain = if artifact {
                ArtifactKind::OVERLAYS[rng.random_range(0..ArtifactKind::OVERLAYS.len())]
            } else {
                ArtifactKind::Clean
            };
            RecordRef {
                id: record_id(split, split_seed, index),
                seed: derive(split_seed, index as u64),
                label,
                domain,
            }
        })
        .collect();
    Ok(DatasetManifest {
        records,
        split,
        bias_degree: Some(spec.bias_degree),
        image_size: spec.image_size,
        co_artifact_rate: 0.0,
    })
}

/// Phi coefficient between "has an artifact" and "label is 1".
pub fn measure_artifact_label_correlation(manifest: &DatasetManifest) -> Result<f64> {
    if manifest.len() < 2 {
        return Err(EpvtError::UndefinedCorrelation("fewer than two records".into()));
    }
    // n[artifact][label]
    let mut n = [[0f64; 2]; 2];
    for r in &manifest.records {
        n[usize::from(r.domain.is_artifact())][r.label as usize] += 1.0;
    }
    let label_pos = n[0][1] + n[1][1];
    let label_neg = n[0][0] + n[1][0];
    let art = n[1][0] + n[1][1];
    let clean = n[0][0] + n[0][1];
    if label_pos == 0.0 || label_neg == 0.0 {
        return Err(EpvtError::UndefinedCorrelation("only one class present".into()));
    }
    if art == 0.0 || clean == 0.0 {
        return Err(EpvtError::UndefinedCorrelation(
            "artifact presence is constant".into(),
        ));
    }
    let num = n[1][1] * n[0][0] - n[1][0] * n[0][1];
    Ok(num / (label_pos * label_neg * art * clean).sqrt())
}
