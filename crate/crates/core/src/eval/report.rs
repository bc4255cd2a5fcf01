use super::frechet::{frechet_distance, GaussianSummary};
use super::inference::{adapter_weights, plain_features};
use super::metrics::spearman;
use crate::error::{EpvtError, Result};
use crate::synth::{ArtifactKind, ImageRecord};
use crate::train::Method;
use crate::vit::EpvtModel;

/// Mean adapter weights per true domain and over the whole set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    /// `(domain, mean weights)` for every domain present, in ordinal order.
    pub rows: Vec<(ArtifactKind, Vec<f64>)>,
    pub overall: Vec<f64>,
}

impl WeightReport {
    /// `domain,w_1,…,w_M` table with an `all` row last.
    pub fn to_csv(&self) -> String {
        let m = self.overall.len();
        let mut s = String::from("domain");
        for k in 0..m {
            s.push_str(&format!(",w_{}", k + 1));
        }
        s.push('\n');
        let fmt = |name: &str, w: &[f64]| {
            let cells: Vec<String> = w.iter().map(f64::to_string).collect();
            format!("{name},{}\n", cells.join(","))
        };
        for (d, w) in &self.rows {
            s.push_str(&fmt(d.as_str(), w));
        }
        s.push_str(&fmt("all", &self.overall));
        s
    }
}

fn mean_rows(rows: &[&Vec<f64>], m: usize) -> Vec<f64> {
    let mut acc = vec![0.0; m];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

/// Runs `forward_plain → adapter` on every record and averages the weights
/// per true domain.
pub fn domain_weight_report(model: &EpvtModel, method: Method, records: &[ImageRecord]) -> Result<WeightReport> {
    if method != Method::Epvt {
        return Err(EpvtError::UnsupportedMethod(
            "prompt weights exist only for models trained with epvt".into(),
        ));
    }
    if records.is_empty() {
        return Err(EpvtError::EmptyDataset("no records to weigh".into()));
    }
    let m = model.config().num_domains;
    let weights = adapter_weights(model, records)?;
    let rows = ArtifactKind::ALL
        .iter()
        .filter_map(|&kind| {
            let sel: Vec<&Vec<f64>> = records
                .iter()
                .zip(&weights)
                .filter(|(r, _)| r.domain == kind)
                .map(|(_, w)| w)
                .collect();
            (!sel.is_empty()).then(|| (kind, mean_rows(&sel, m)))
        })
        .collect();
    let all: Vec<&Vec<f64>> = weights.iter().collect();
    Ok(WeightReport {
        rows,
        overall: mean_rows(&all, m),
    })
}

/// Distance of each source domain to a target set against the weight the
/// adapter gives that domain's prompt on the target set.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptWeightAnalysis {
    pub domains: Vec<ArtifactKind>,
    /// Squared Fréchet distance from each source domain's features to the
    /// target features.
    pub distances: Vec<f64>,
    /// Mean adapter weight of each domain's prompt over the target images.
    pub target_weights: Vec<f64>,
    /// Spearman correlation of `distances` and `target_weights`.
    pub spearman: f64,
}

impl PromptWeightAnalysis {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("domain,frechet_distance,target_weight\n");
        for ((d, f), w) in self.domains.iter().zip(&self.distances).zip(&self.target_weights) {
            s.push_str(&format!("{d},{f},{w}\n"));
        }
        s
    }
}

/// Feature-distance versus prompt-weight analysis of a trained EPVT model.
/// Every source domain with at least one record enters the comparison.
pub fn prompt_weight_analysis(
    model: &EpvtModel,
    source: &[ImageRecord],
    target: &[ImageRecord],
) -> Result<PromptWeightAnalysis> {
    if target.is_empty() {
        return Err(EpvtError::EmptyDataset("target set is empty".into()));
    }
    let target_summary = GaussianSummary::from_samples(&plain_features(model, target)?)?;
    let weights = domain_weight_report(model, Method::Epvt, target)?.overall;
    let source_features = plain_features(model, source)?;

    let mut domains = Vec::new();
    let mut distances = Vec::new();
    let mut target_weights = Vec::new();
    for kind in ArtifactKind::ALL {
        let rows: Vec<Vec<f64>> = source
            .iter()
            .zip(&source_features)
            .filter(|(r, _)| r.domain == kind)
            .map(|(_, f)| f.clone())
            .collect();
        if rows.is_empty() || kind.index() >= weights.len() {
            continue;
        }
        let summary = GaussianSummary::from_samples(&rows)?;
        domains.push(kind);
        distances.push(frechet_distance(&summary, &target_summary)?);
        target_weights.push(weights[kind.index()]);
    }
    let rho = spearman(&distances, &target_weights)?;
    Ok(PromptWeightAnalysis {
        domains,
        distances,
        target_weights,
        spearman: rho,
    })
}
