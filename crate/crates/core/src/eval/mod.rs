//! Metrics and analyses: ROC-AUC, Fréchet distance between feature
//! distributions, adapter weight reports, trap-set bias sweeps and rank
//! correlation.

mod frechet;
mod inference;
mod metrics;
mod report;
mod sweep;

pub use frechet::{frechet_distance, GaussianSummary, SHRINKAGE};
pub use inference::{adapter_weights, melanoma_scores, plain_features, predict_logits, EVAL_BATCH};
pub use metrics::{average_ranks, pearson, roc_auc, spearman, ScoredSet};
pub use report::{domain_weight_report, prompt_weight_analysis, PromptWeightAnalysis, WeightReport};
pub use sweep::{mean_auc, sweep_csv, trap_sweep, trap_sweep_with, SweepConfig, SweepRow, SWEEP_HEADER};
