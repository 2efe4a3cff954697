use std::fs;
use std::path::{Path, PathBuf};

use multidebias::pipeline::{run_pipeline, PipelineConfig, CHECKPOINT_FILE, SCORES_FILE};

fn sample_config(out: &Path) -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample/md_full.json");
    let mut cfg = PipelineConfig::load(&path).unwrap();
    cfg.out = out.to_path_buf();
    if let Some(t) = cfg.train.as_mut() {
        t.optimizer.epochs = 1;
    }
    cfg
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn rerun_reuses_stages_and_rebuilds_missing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_config(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    assert!(first.reused.is_empty());
    assert_eq!(first.label, "MD w/ Full Fine-Tune");

    let ckpt: PathBuf = dir.path().join(CHECKPOINT_FILE);
    let ckpt_bytes = fs::read(&ckpt).unwrap();
    let ckpt_mtime = fs::metadata(&ckpt).unwrap().modified().unwrap();
    let scores = read(dir.path(), SCORES_FILE);

    fs::remove_file(dir.path().join("report.txt")).unwrap();
    let second = run_pipeline(&cfg).unwrap();
    assert_eq!(second.reused, ["augment", "train"]);
    assert_eq!(fs::read(&ckpt).unwrap(), ckpt_bytes);
    assert_eq!(fs::metadata(&ckpt).unwrap().modified().unwrap(), ckpt_mtime);
    assert_eq!(read(dir.path(), SCORES_FILE), scores);
    assert!(dir.path().join("report.txt").exists());

    let third = run_pipeline(&cfg).unwrap();
    assert_eq!(third.reused, ["augment", "train", "evaluate"]);
}

#[test]
fn changed_training_settings_retrain() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sample_config(dir.path());
    run_pipeline(&cfg).unwrap();
    cfg.train.as_mut().unwrap().optimizer.seed = 7;
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(again.reused, ["augment"]);
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&sample_config(a.path())).unwrap();
    run_pipeline(&sample_config(b.path())).unwrap();
    for name in [CHECKPOINT_FILE, SCORES_FILE, "corpus.tsv", "loss.json", "report.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn failing_stage_names_its_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sample_config(dir.path());
    let bad = dir.path().join("bad_pairs.tsv");
    fs::write(&bad, "not a pair file\n").unwrap();
    cfg.evaluation.crows_pairs = vec![bad];
    let err = run_pipeline(&cfg).unwrap_err().to_string();
    assert!(err.contains("evaluate"), "{err}");
    assert!(dir.path().join(CHECKPOINT_FILE).exists());
}
