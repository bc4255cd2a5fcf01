use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use epvt::config::RunConfig;
use epvt::eval::{
    domain_weight_report, melanoma_scores, prompt_weight_analysis, roc_auc, sweep_csv, trap_sweep_with, ScoredSet,
};
use epvt::rng::derive;
use epvt::synth::{
    build_trap_split, export_png, generate_dataset, manifests_to_csv, read_manifests, DatasetManifest, Split,
    TrapSplitSpec,
};
use epvt::train::{fit, Checkpoint};
use epvt::EpvtError;
use sha2::{Digest, Sha256};

use crate::output::Outputs;
use crate::{Command, Failure};

pub const META_FORMAT: u32 = 1;

pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

struct RunContext {
    cfg: RunConfig,
    meta: String,
    out_dir: PathBuf,
    seed_override: bool,
}

impl RunContext {
    /// `run_meta` header followed by `body`.
    fn table(&self, body: &str) -> String {
        format!("# {}\n{body}", self.meta)
    }

    fn manifest_path(&self) -> PathBuf {
        self.cfg.paths.manifest.clone().unwrap_or_else(|| self.out_dir.join("manifest.csv"))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.paths.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }
}

fn usage_error(e: EpvtError) -> Failure {
    match e {
        EpvtError::UnknownKey(_) | EpvtError::InvalidConfig(_) | EpvtError::UnsupportedMethod(_) => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Runtime(other.into()),
    }
}

fn load_config(inv: &Invocation) -> Result<(RunConfig, String), Failure> {
    let bytes = fs::read(&inv.config)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", inv.config.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::Usage(format!("config {} is not UTF-8", inv.config.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(usage_error)?;
    let required: &[&str] = match inv.command {
        Command::Train => &["method"],
        Command::TrapSweep => &["sweep_biases"],
        _ => &[],
    };
    cfg.require(required).map_err(usage_error)?;
    if let Some(seed) = inv.seed {
        cfg.train.seed = seed;
    }
    let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let meta = format!("run_meta format={META_FORMAT} seed={} config_hash={hash}", cfg.train.seed);
    Ok((cfg, meta))
}

pub fn run(inv: &Invocation) -> Result<(), Failure> {
    let (cfg, meta) = load_config(inv)?;
    let ctx = RunContext {
        cfg,
        meta,
        out_dir: inv.out.clone(),
        seed_override: inv.seed.is_some(),
    };
    let mut out = Outputs::open(&inv.out)?;
    match inv.command {
        Command::GenData => gen_data(&ctx, &mut out)?,
        Command::Train => train(&ctx, &mut out)?,
        Command::Eval => eval(&ctx, &mut out)?,
        Command::TrapSweep => sweep(&ctx, &mut out)?,
        Command::Analyze => analyze(&ctx, &mut out)?,
    }
    out.commit();
    Ok(())
}

fn gen_data(ctx: &RunContext, out: &mut Outputs) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.train.seed;
    let size = cfg.model.image_size;
    let d = &cfg.data;
    let manifests: Vec<DatasetManifest> = if let Some(bias) = d.trap_bias {
        let mut spec = TrapSplitSpec::new(bias, d.n_train, d.n_test, seed);
        spec.image_size = size;
        let (train, test) = build_trap_split(&spec)?;
        let mut val_spec = TrapSplitSpec::new(bias, d.n_val, d.n_val, derive(seed, 0x7A1));
        val_spec.image_size = size;
        let (mut val, _) = build_trap_split(&val_spec)?;
        val.split = Split::Val;
        for r in &mut val.records {
            r.id = r.id.replacen("train", "val", 1);
        }
        vec![train, val, test]
    } else {
        let mut v = vec![
            generate_dataset(&d.domain_spec(d.counts, seed, size, Split::Train))?,
            generate_dataset(&d.domain_spec(d.val_counts(), derive(seed, 0x7A1), size, Split::Val))?,
        ];
        if d.n_target > 0 {
            v.push(generate_dataset(&d.domain_spec(d.target_counts()?, derive(seed, 0x7E5), size, Split::Test))?);
        }
        v
    };
    let refs: Vec<&DatasetManifest> = manifests.iter().collect();
    let path = out.write("manifest.csv", &manifests_to_csv(&refs, &[ctx.meta.clone()]))?;
    log::info!("wrote {} ({} records)", path.display(), manifests.iter().map(|m| m.len()).sum::<usize>());

    if d.export_pixels {
        let dir = out.path("pixels");
        if !dir.exists() {
            out.track(dir.clone());
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for m in &manifests {
            for r in &m.records {
                let target = dir.join(format!("{}.png", r.id));
                if !target.exists() {
                    out.track(target);
                }
                export_png(&m.materialize(r)?, &dir, &r.id)?;
            }
        }
        log::info!("exported pixels to {}", dir.display());
    }
    Ok(())
}

fn split_of(manifests: &[DatasetManifest], split: Split, path: &Path) -> anyhow::Result<DatasetManifest> {
    manifests
        .iter()
        .find(|m| m.split == split)
        .cloned()
        .ok_or_else(|| anyhow!("{} has no {split} split", path.display()))
}

fn read(path: &Path) -> anyhow::Result<Vec<DatasetManifest>> {
    read_manifests(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn train(ctx: &RunContext, out: &mut Outputs) -> anyhow::Result<()> {
    let path = ctx.manifest_path();
    let manifests = read(&path)?;
    let train = split_of(&manifests, Split::Train, &path)?;
    let val = split_of(&manifests, Split::Val, &path)?;
    let outcome = fit(&ctx.cfg.model, &ctx.cfg.train, &train, &val)?;
    out.write("train_log.csv", &ctx.table(&outcome.log_csv()))?;
    let ckpt = out.track(out.path("model.ckpt"));
    outcome.best.save(&ckpt)?;
    log::info!(
        "best validation AUC {} at epoch {}; wrote {}",
        outcome.best.best_val_auc,
        outcome.best.epoch,
        ckpt.display()
    );
    Ok(())
}

fn load_ckpt(ctx: &RunContext) -> anyhow::Result<Checkpoint> {
    let path = ctx.checkpoint_path();
    Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn eval(ctx: &RunContext, out: &mut Outputs) -> anyhow::Result<()> {
    let ckpt = load_ckpt(ctx)?;
    let path = ctx.manifest_path();
    let split = ctx.cfg.paths.eval_split;
    let manifest = split_of(&read(&path)?, split, &path)?;
    let records = manifest.materialize_all()?;
    let scores = melanoma_scores(&ckpt.model, ckpt.train.method, &records)?;
    let auc = roc_auc(&ScoredSet::new(scores, records.iter().map(|r| r.label).collect())?)?;
    let body = format!("split,method,n,auc\n{split},{},{},{auc}\n", ckpt.train.method, records.len());
    out.write("eval.csv", &ctx.table(&body))?;
    log::info!("{split} AUC {auc}");
    Ok(())
}

fn sweep(ctx: &RunContext, out: &mut Outputs) -> anyhow::Result<()> {
    let mut base = ctx.cfg.sweep_config();
    // An explicit seed without a seed list runs that single seed.
    if !ctx.cfg.is_set("sweep_seeds") && (ctx.cfg.is_set("seed") || ctx.seed_override) {
        base.seeds = vec![ctx.cfg.train.seed];
    }
    let rows = trap_sweep_with(&ctx.cfg.sweep_biases, &base, |r| {
        log::info!("bias {} {} seed {}: test AUC {}", r.bias, r.method, r.seed, r.test_auc)
    })?;
    out.write("sweep.csv", &ctx.table(&sweep_csv(&rows)))?;
    Ok(())
}

fn analyze(ctx: &RunContext, out: &mut Outputs) -> anyhow::Result<()> {
    let ckpt = load_ckpt(ctx)?;
    let path = ctx.manifest_path();
    let manifests = read(&path)?;
    let source = split_of(&manifests, Split::Train, &path)?.materialize_all()?;
    let target = split_of(&manifests, Split::Test, &path)?.materialize_all()?;
    let weights = domain_weight_report(&ckpt.model, ckpt.train.method, &source)?;
    let analysis = prompt_weight_analysis(&ckpt.model, &source, &target)?;
    out.write("analysis.csv", &ctx.table(&analysis.to_csv()))?;
    out.write("weights.csv", &ctx.table(&weights.to_csv()))?;
    let corr = format!("statistic,value\nspearman,{}\n", analysis.spearman);
    out.write("correlation.csv", &ctx.table(&corr))?;
    log::info!("spearman(distance, weight) = {}", analysis.spearman);
    Ok(())
}
