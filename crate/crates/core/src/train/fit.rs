use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::batching::{balanced_batches, shuffled_batches};
use super::{Checkpoint, Method, TrainConfig};
use crate::error::{EpvtError, Result};
use crate::eval::{melanoma_scores, roc_auc, ScoredSet};
use crate::objectives::{erm_loss, total_loss, Batch, LossReport, LossTerms, MixupPlan};
use crate::rng::{stream, Stream};
use crate::synth::{DatasetManifest, ImageRecord};
use crate::vit::{EpvtModel, ModelConfig};

pub const TRAIN_LOG_HEADER: &str = "epoch,l_mixup,l_adapted_ce,l_weight_sup,l_total,val_auc";

/// Owns a model, its optimizer and the training random streams.
pub struct Trainer {
    model: EpvtModel,
    cfg: TrainConfig,
    opt: AdamW,
    batching: ChaCha8Rng,
    mixup: ChaCha8Rng,
    augmentation: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    /// Initializes a model from `cfg.seed`.
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig, dtype: DType) -> Result<Self> {
        let model = EpvtModel::new(model_cfg, dtype, cfg.seed)?;
        Self::from_model(model, cfg)
    }

    pub fn from_model(model: EpvtModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let vars: Vec<Var> = model
            .named_vars()
            .into_iter()
            .filter(|nv| cfg.method == Method::Epvt || nv.group.is_backbone_or_head())
            .map(|nv| nv.var)
            .collect();
        let opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr: cfg.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: cfg.weight_decay,
            },
        )?;
        Ok(Self {
            model,
            cfg: cfg.clone(),
            opt,
            batching: stream(cfg.seed, Stream::Batching),
            mixup: stream(cfg.seed, Stream::Mixup),
            augmentation: stream(cfg.seed, Stream::Augmentation),
            step: 0,
        })
    }

    pub fn model(&self) -> &EpvtModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn into_model(self) -> EpvtModel {
        self.model
    }

    /// Evaluates the method's loss on `batch` without updating anything.
    /// EPVT draws its mixup plan from the trainer's mixup stream.
    pub fn loss(&mut self, batch: &Batch) -> Result<LossTerms> {
        match self.cfg.method {
            Method::Erm => erm_loss(&self.model, batch),
            Method::Epvt => {
                let plan = MixupPlan::sample(&batch.domains, self.cfg.objective.mixup_alpha, &mut self.mixup)?;
                total_loss(&self.model, batch, &plan, &self.cfg.objective)
            }
        }
    }

    /// One gradient evaluation and one optimizer update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let terms = self.loss(batch)?;
        self.apply(terms)
    }

    /// Like [`Self::train_step`] with an explicit mixup plan.
    pub fn train_step_with_plan(&mut self, batch: &Batch, plan: &MixupPlan) -> Result<LossReport> {
        let terms = match self.cfg.method {
            Method::Erm => erm_loss(&self.model, batch)?,
            Method::Epvt => total_loss(&self.model, batch, plan, &self.cfg.objective)?,
        };
        self.apply(terms)
    }

    fn apply(&mut self, terms: LossTerms) -> Result<LossReport> {
        let grads = terms.total.backward()?;
        if !terms.report.is_finite() {
            return Err(EpvtError::NonFiniteLoss {
                step: self.step,
                diagnostics: self.diagnostics(&terms.report, &grads),
            });
        }
        self.opt.step(&grads)?;
        self.step += 1;
        Ok(terms.report)
    }

    fn diagnostics(&self, report: &LossReport, grads: &candle_core::backprop::GradStore) -> String {
        let norm = |t: &candle_core::Tensor| -> f64 {
            t.to_dtype(DType::F64)
                .and_then(|t| t.sqr()?.sum_all()?.sqrt()?.to_scalar::<f64>())
                .unwrap_or(f64::NAN)
        };
        let mut lines = vec![format!("{report:?}")];
        for nv in self.model.named_vars() {
            let g = grads.get(nv.var.as_tensor()).map(norm);
            lines.push(format!(
                "{} |param|={:.4e} |grad|={}",
                nv.name,
                norm(nv.var.as_tensor()),
                g.map_or("none".to_string(), |g| format!("{g:.4e}"))
            ));
        }
        lines.join("; ")
    }

    /// Batches for one epoch as index lists into the training records.
    pub fn epoch_schedule(&mut self, domains: &[usize]) -> Result<Vec<Vec<usize>>> {
        match self.cfg.method {
            Method::Epvt => balanced_batches(domains, self.cfg.batch_size, &mut self.batching),
            Method::Erm => Ok(shuffled_batches(domains.len(), self.cfg.batch_size, &mut self.batching)),
        }
    }

    /// Augments the selected records and stacks them into a batch.
    pub fn make_batch(&mut self, records: &[ImageRecord], indices: &[usize]) -> Result<Batch> {
        let augmented: Vec<ImageRecord> = indices
            .iter()
            .map(|&i| augment(&records[i], &self.cfg.augment, &mut self.augmentation))
            .collect();
        let refs: Vec<&ImageRecord> = augmented.iter().collect();
        Batch::from_records(&self.model, &refs)
    }

    /// One pass over the training records; returns the mean loss report.
    pub fn run_epoch(&mut self, records: &[ImageRecord]) -> Result<LossReport> {
        let domains: Vec<usize> = records.iter().map(|r| r.domain.index()).collect();
        let schedule = self.epoch_schedule(&domains)?;
        let mut sum = [0.0; 4];
        for indices in &schedule {
            let batch = self.make_batch(records, indices)?;
            let r = self.train_step(&batch)?;
            for (s, v) in sum.iter_mut().zip([r.l_mixup, r.l_adapted_ce, r.l_weight_sup, r.l_total]) {
                *s += v;
            }
        }
        let n = schedule.len() as f64;
        Ok(LossReport {
            l_mixup: sum[0] / n,
            l_adapted_ce: sum[1] / n,
            l_weight_sup: sum[2] / n,
            l_total: sum[3] / n,
        })
    }

    pub fn validation_auc(&self, records: &[ImageRecord]) -> Result<f64> {
        let scores = melanoma_scores(&self.model, self.cfg.method, records)?;
        roc_auc(&ScoredSet::new(scores, records.iter().map(|r| r.label).collect())?)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossReport,
    pub val_auc: f64,
}

impl EpochLog {
    /// One CSV row matching [`TRAIN_LOG_HEADER`].
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{}",
            self.epoch, l.l_mixup, l.l_adapted_ce, l.l_weight_sup, l.l_total, self.val_auc
        )
    }
}

/// Callbacks into [`fit_with_hooks`].
#[derive(Default)]
pub struct FitHooks<'a> {
    /// Replaces the measured validation AUC `(epoch, measured) -> used`.
    pub val_metric: Option<Box<dyn FnMut(usize, f64) -> f64 + 'a>>,
    /// Called after every epoch.
    pub on_epoch: Option<Box<dyn FnMut(&EpochLog) + 'a>>,
}

pub struct FitOutcome {
    /// Parameters from the epoch with the best validation AUC.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    /// True when training ended by early stopping rather than `max_epochs`.
    pub stopped_early: bool,
}

impl FitOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for e in &self.log {
            s.push_str(&e.csv_row());
            s.push('\n');
        }
        s
    }
}

fn materialize(manifest: &DatasetManifest, model_cfg: &ModelConfig, what: &str) -> Result<Vec<ImageRecord>> {
    if manifest.is_empty() {
        return Err(EpvtError::EmptyDataset(format!("{what} manifest has no records")));
    }
    if manifest.image_size != model_cfg.image_size {
        return Err(EpvtError::Dimension(format!(
            "{what} images are {0}×{0}, model expects {1}×{1}",
            manifest.image_size, model_cfg.image_size
        )));
    }
    manifest.materialize_all()
}

/// Trains with early stopping on validation ROC-AUC and returns the best
/// checkpoint.
pub fn fit(model_cfg: &ModelConfig, cfg: &TrainConfig, train: &DatasetManifest, val: &DatasetManifest) -> Result<FitOutcome> {
    fit_with_hooks(model_cfg, cfg, train, val, FitHooks::default())
}

pub fn fit_with_hooks(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &DatasetManifest,
    val: &DatasetManifest,
    mut hooks: FitHooks<'_>,
) -> Result<FitOutcome> {
    let train_records = materialize(train, model_cfg, "training")?;
    let val_records = materialize(val, model_cfg, "validation")?;
    let mut trainer = Trainer::new(model_cfg, cfg, DType::F32)?;

    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let losses = trainer.run_epoch(&train_records)?;
        let mut val_auc = trainer.validation_auc(&val_records)?;
        if let Some(h) = hooks.val_metric.as_mut() {
            val_auc = h(epoch, val_auc);
        }
        let entry = EpochLog { epoch, losses, val_auc };
        log::info!("{} {}", cfg.method, entry.csv_row());
        if let Some(h) = hooks.on_epoch.as_mut() {
            h(&entry);
        }
        log.push(entry);

        if best.as_ref().is_none_or(|b| val_auc > b.best_val_auc) {
            best = Some(Checkpoint {
                model: trainer.model().deep_clone()?,
                train: cfg.clone(),
                epoch,
                best_val_auc: val_auc,
            });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(FitOutcome {
        best: best.expect("max_epochs is positive"),
        log,
        stopped_early,
    })
}
