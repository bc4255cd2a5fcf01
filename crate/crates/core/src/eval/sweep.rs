use super::inference::melanoma_scores;
use super::metrics::{roc_auc, ScoredSet};
use crate::error::{EpvtError, Result};
use crate::rng::derive;
use crate::synth::{build_trap_split, TrapSplitSpec};
use crate::train::{fit, Method, TrainConfig};
use crate::vit::ModelConfig;

pub const SWEEP_HEADER: &str = "bias,method,seed,test_auc";

/// Everything a trap sweep needs besides the bias list.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub model: ModelConfig,
    /// Shared training settings; `method` and `seed` are set per row.
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub bias: f64,
    pub method: Method,
    pub seed: u64,
    pub test_auc: f64,
}

/// Seed of the data splits for one (bias, seed) cell.
fn data_seed(bias: f64, seed: u64) -> u64 {
    derive(seed, bias.to_bits())
}

/// Trains ERM and EPVT on a trap split per bias and seed and scores both on
/// the reversed-correlation test split.
///
/// Validation data come from a second trap split with the training-split
/// correlation, so model selection only sees the source distribution.
pub fn trap_sweep(biases: &[f64], base: &SweepConfig) -> Result<Vec<SweepRow>> {
    trap_sweep_with(biases, base, |_| {})
}

/// [`trap_sweep`] with a callback after every finished row.
pub fn trap_sweep_with(biases: &[f64], base: &SweepConfig, mut on_row: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    if let Some(b) = biases.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(EpvtError::InvalidConfig(format!("bias {b} is outside [0, 1]")));
    }
    if base.seeds.is_empty() {
        return Err(EpvtError::InvalidConfig("trap sweep needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &bias in biases {
        for &seed in &base.seeds {
            let ds = data_seed(bias, seed);
            let mut spec = TrapSplitSpec::new(bias, base.n_train, base.n_test, ds);
            spec.image_size = base.model.image_size;
            let (train, test) = build_trap_split(&spec)?;
            let mut val_spec = TrapSplitSpec::new(bias, base.n_val, base.n_val, derive(ds, 0x7A1));
            val_spec.image_size = base.model.image_size;
            let (val, _) = build_trap_split(&val_spec)?;
            let test_records = test.materialize_all()?;
            let labels: Vec<u8> = test_records.iter().map(|r| r.label).collect();

            for method in [Method::Erm, Method::Epvt] {
                let mut cfg = base.train.clone();
                cfg.method = method;
                cfg.seed = seed;
                let outcome = fit(&base.model, &cfg, &train, &val)?;
                let scores = melanoma_scores(&outcome.best.model, method, &test_records)?;
                let test_auc = roc_auc(&ScoredSet::new(scores, labels.clone())?)?;
                let row = SweepRow {
                    bias,
                    method,
                    seed,
                    test_auc,
                };
                log::info!("trap sweep {row:?}");
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.bias, r.method, r.seed, r.test_auc));
    }
    s
}

/// Mean test AUC of `method` at `bias` over all seeds in `rows`.
pub fn mean_auc(rows: &[SweepRow], bias: f64, method: Method) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.bias == bias && r.method == method)
        .map(|r| r.test_auc)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
