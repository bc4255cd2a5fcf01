//! Domain-labelled datasets stored as seeds plus a manifest.
//!
//! Pixels are regenerated on demand from each record's seed, so a manifest is
//! the complete description of a dataset.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::render::{draw_overlay, render_base_lesion, ImageRecord};
use super::ArtifactKind;
use crate::error::{EpvtError, Result};
use crate::rng::{derive, rng_from};

const TAG_OVERLAY: u64 = 0x0E;
const TAG_CO_ARTIFACT: u64 = 0xC0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = EpvtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(EpvtError::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// A manifest row: everything needed to regenerate one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordRef {
    pub id: String,
    pub seed: u64,
    pub label: u8,
    pub domain: ArtifactKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<RecordRef>,
    pub split: Split,
    pub bias_degree: Option<f64>,
    pub image_size: usize,
    /// Probability that a record carries a second overlay besides its domain's.
    pub co_artifact_rate: f64,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(EpvtError::EmptyDataset(format!("{} manifest has no records", self.split)));
        }
        if let Some(b) = self.bias_degree {
            if !(0.0..=1.0).contains(&b) {
                return Err(EpvtError::InvalidConfig(format!("bias degree {b} outside [0, 1]")));
            }
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(EpvtError::InvalidConfig(format!("duplicate record id `{}`", r.id)));
            }
            if r.label > 1 {
                return Err(EpvtError::InvalidConfig(format!("record `{}` has label {}", r.id, r.label)));
            }
        }
        Ok(())
    }

    /// Number of records per domain, indexed by domain ordinal.
    pub fn domain_counts(&self) -> [usize; ArtifactKind::COUNT] {
        let mut counts = [0; ArtifactKind::COUNT];
        for r in &self.records {
            counts[r.domain.index()] += 1;
        }
        counts
    }

    pub fn materialize(&self, record: &RecordRef) -> Result<ImageRecord> {
        materialize_record(record, self.image_size, self.co_artifact_rate)
    }

    pub fn materialize_all(&self) -> Result<Vec<ImageRecord>> {
        self.records.iter().map(|r| self.materialize(r)).collect()
    }
}

/// Regenerates the pixels of one record.
///
/// The base lesion comes from the record seed, the domain overlay from a
/// derived seed, and with probability `co_artifact_rate` a second, different
/// overlay is drawn while the domain label stays unchanged.
pub fn materialize_record(record: &RecordRef, image_size: usize, co_artifact_rate: f64) -> Result<ImageRecord> {
    let base = render_base_lesion(record.seed, record.label, image_size)?;
    let mut img = super::render::apply_artifact(&base, record.domain, derive(record.seed, TAG_OVERLAY))?;
    if co_artifact_rate > 0.0 {
        let mut rng = rng_from(derive(record.seed, TAG_CO_ARTIFACT));
        if rng.random::<f64>() < co_artifact_rate {
            let others: Vec<ArtifactKind> = ArtifactKind::OVERLAYS
                .into_iter()
                .filter(|k| *k != record.domain)
                .collect();
            let extra = others[rng.random_range(0..others.len())];
            draw_overlay(&mut img.pixels, img.size, extra, rng.random());
        }
    }
    Ok(img)
}

/// Per-domain sizes and rendering settings for a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    /// Record count per domain, indexed by domain ordinal.
    pub counts: [usize; ArtifactKind::COUNT],
    /// Fraction of melanoma-like (label 1) records within each domain.
    pub class_balance: f64,
    pub seed: u64,
    pub image_size: usize,
    pub co_artifact_rate: f64,
    pub split: Split,
}

impl DomainSpec {
    /// Domain sizes of the five artifact groups of the ISIC2019 training
    /// set, scaled by roughly 1/100.
    pub fn scaled_isic(seed: u64) -> Self {
        Self {
            counts: [24, 48, 16, 8, 28],
            class_balance: 0.5,
            seed,
            image_size: 32,
            co_artifact_rate: 0.15,
            split: Split::Train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = self.counts.iter().filter(|&&c| c > 0).count();
        if nonzero < 2 {
            return Err(EpvtError::InvalidConfig(
                "at least two domains need a nonzero count".into(),
            ));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(EpvtError::InvalidConfig(format!(
                "class balance {} outside (0, 1)",
                self.class_balance
            )));
        }
        if !(0.0..=1.0).contains(&self.co_artifact_rate) {
            return Err(EpvtError::InvalidConfig(format!(
                "co-artifact rate {} outside [0, 1]",
                self.co_artifact_rate
            )));
        }
        if self.image_size < super::render::MIN_IMAGE_SIZE {
            return Err(EpvtError::InvalidConfig(format!(
                "image size {} is below the minimum of {}",
                self.image_size,
                super::render::MIN_IMAGE_SIZE
            )));
        }
        Ok(())
    }
}

pub(crate) fn record_id(split: Split, seed: u64, index: usize) -> String {
    format!("{}-{:08x}-{:05}", split, seed & 0xFFFF_FFFF, index)
}

/// Builds a domain-labelled dataset with exact per-domain counts.
pub fn generate_dataset(spec: &DomainSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut rng = rng_from(derive(spec.seed, 0xDA7A));
    let mut records = Vec::with_capacity(spec.counts.iter().sum());
    for kind in ArtifactKind::ALL {
        let count = spec.counts[kind.index()];
        let positives = (count as f64 * spec.class_balance).round() as usize;
        let mut labels: Vec<u8> = (0..count).map(|i| u8::from(i < positives)).collect();
        labels.shuffle(&mut rng);
        for label in labels {
            let index = records.len();
            records.push(RecordRef {
                id: record_id(spec.split, spec.seed, index),
                seed: derive(spec.seed, index as u64),
                label,
                domain: kind,
            });
        }
    }
    Ok(DatasetManifest {
        records,
        split: spec.split,
        bias_degree: None,
        image_size: spec.image_size,
        co_artifact_rate: spec.co_artifact_rate,
    })
}
