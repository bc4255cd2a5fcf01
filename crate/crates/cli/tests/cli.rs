use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_MODEL: &str = "image_size = 16\npatch_size = 8\nembed_dim = 16\ndepth = 1\nnum_heads = 2\nprompt_len = 2\n";

fn epvt(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epvt"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{TINY_MODEL}{body}")).unwrap();
    path
}

fn toy_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "toy.conf",
        "method = epvt\nseed = 3\nlearning_rate = 0.001\nbatch_size = 10\nmax_epochs = 4\npatience = 4\n\
         n_dark_corner = 8\nn_hair = 8\nn_gel_bubble = 8\nn_ruler = 8\nn_clean = 8\nn_target = 20\n",
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn last_val_auc(log: &str) -> f64 {
    let row = log.lines().filter(|l| !l.starts_with('#')).last().unwrap();
    row.rsplit(',').next().unwrap().parse().unwrap()
}

fn eval_auc(csv: &str) -> f64 {
    let mut rows = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(rows.next(), Some("split,method,n,auc"));
    rows.next().unwrap().rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn misspelled_key_is_a_usage_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.conf", "method = epvt\nlearning_rte = 0.001\n");
    let out = dir.path().join("out");
    let o = epvt(&["train"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rte"), "{}", stderr(&o));
    assert!(!out.exists(), "failed run left its output directory behind");
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = epvt(&["gen-data"], &dir.path().join("absent.conf"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_epvt")).arg("fine-tune").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fine-tune"));
}

#[test]
fn pipeline_writes_tables_and_eval_agrees_with_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = dir.path().join("run");
    for cmd in ["gen-data", "train"] {
        let o = epvt(&[cmd], &cfg, &out);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }

    let manifest_before = fs::read(out.join("manifest.csv")).unwrap();
    let config_before = fs::read(&cfg).unwrap();
    let ckpt_before = fs::read(out.join("model.ckpt")).unwrap();

    let eval_cfg = dir.path().join("eval.conf");
    fs::write(&eval_cfg, format!("{}eval_split = train\n", fs::read_to_string(&cfg).unwrap())).unwrap();
    let o = epvt(&["eval"], &eval_cfg, &out);
    assert!(o.status.success(), "eval: {}", stderr(&o));
    let o = epvt(&["analyze"], &cfg, &out);
    assert!(o.status.success(), "analyze: {}", stderr(&o));

    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let eval = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(eval_auc(&eval) >= last_val_auc(&log) - 0.2, "eval {eval} vs log {log}");

    for name in ["manifest.csv", "train_log.csv", "eval.csv", "analysis.csv", "weights.csv", "correlation.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# run_meta format=1 seed=3 config_hash="), "{name}: {first}");
    }

    assert_eq!(fs::read(out.join("manifest.csv")).unwrap(), manifest_before);
    assert_eq!(fs::read(&cfg).unwrap(), config_before);
    assert_eq!(fs::read(out.join("model.ckpt")).unwrap(), ckpt_before);
}

#[test]
fn failed_run_removes_its_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = dir.path().join("run");
    assert!(epvt(&["gen-data"], &cfg, &out).status.success());
    // Training needs a validation split; dropping it makes train fail after
    // the output directory is open.
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    let no_val: String = manifest.lines().filter(|l| !l.contains(",val,")).map(|l| format!("{l}\n")).collect();
    assert_ne!(no_val, manifest, "manifest rows carry the split name");
    fs::write(out.join("manifest.csv"), &no_val).unwrap();

    let o = epvt(&["train"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.join("train_log.csv").exists());
    assert!(!out.join("model.ckpt").exists());
    assert_eq!(fs::read_to_string(out.join("manifest.csv")).unwrap(), no_val);
}

#[test]
fn repeated_sweep_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.conf",
        "learning_rate = 0.001\nbatch_size = 16\nmax_epochs = 2\npatience = 2\n\
         n_train = 48\nn_val = 20\nn_test = 20\nsweep_biases = 0.5\nsweep_seeds = 1\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = epvt(&["trap-sweep"], &cfg, out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let first = fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("sweep.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3, "{text}");
}
