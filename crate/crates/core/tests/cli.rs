use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MDX: &str = env!("CARGO_BIN_EXE_mdx");

fn sample(name: &str) -> String {
    format!("{}/data/sample/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn mdx(args: &[&str]) -> Output {
    Command::new(MDX).args(args).output().expect("run mdx")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let model = dir.join("model.json");
    fs::write(
        &model,
        r#"{"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_seq_len": 64}"#,
    )
    .unwrap();
    let ckpt = dir.join("m.ckpt");
    let out = mdx(&[
        "train",
        "--corpus",
        &sample("corpus.tsv"),
        "--epochs",
        "1",
        "--model-config",
        s(&model),
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ckpt
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&mdx(&[])), 2);
    assert_eq!(code(&mdx(&["augment", "--bogus"])), 2);
    assert_eq!(
        code(&mdx(&[
            "train", "--corpus", "x.tsv", "--out", "m", "--tuning", "sideways"
        ])),
        2
    );
    assert_eq!(code(&mdx(&["--help"])), 0);
}

#[test]
fn invalid_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("out.tsv");
    assert_eq!(code(&mdx(&["augment", "--in", s(&empty), "--out", s(&out)])), 2);
    assert_eq!(
        code(&mdx(&[
            "augment",
            "--in",
            s(&dir.path().join("missing.tsv")),
            "--out",
            s(&out)
        ])),
        2
    );
    let pairs = &sample("crows_pairs.tsv");
    assert_eq!(
        code(&mdx(&["score-crowspairs", "--pairs", pairs, "--backend", "nonsense"])),
        2
    );

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "XX\tid\tsome text\n").unwrap();
    assert_eq!(code(&mdx(&["augment", "--in", s(&bad), "--out", s(&out)])), 2);
}

#[test]
fn broken_bridge_is_a_runtime_failure() {
    let pairs = &sample("crows_pairs.tsv");
    let out = mdx(&[
        "score-crowspairs",
        "--pairs",
        pairs,
        "--backend",
        "bridge:sh -c 'echo not-a-handshake'",
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn augment_writes_corpus_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = (dir.path().join("aug.tsv"), dir.path().join("report.json"));
    let res = mdx(&[
        "augment",
        "--in",
        &sample("corpus.tsv"),
        "--out",
        s(&out),
        "--report",
        s(&report),
        "--mode",
        "one-sided",
    ]);
    assert_eq!(code(&res), 0);
    let original = fs::read_to_string(sample("corpus.tsv")).unwrap();
    let augmented = fs::read_to_string(&out).unwrap();
    assert_eq!(original.lines().count(), augmented.lines().count());
    assert!(augmented.contains("he works as an engineer ."));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["records_in"], 400);
}

#[test]
fn bridge_scores_match_local_backend() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let pairs = &sample("crows_pairs.tsv");
    let local = mdx(&[
        "score-crowspairs",
        "--pairs",
        pairs,
        "--backend",
        &format!("local:{}", s(&ckpt)),
    ]);
    assert_eq!(code(&local), 0, "{}", String::from_utf8_lossy(&local.stderr));
    let bridge_cmd = format!("bridge:{MDX} serve-local --checkpoint {}", s(&ckpt));
    let bridged = mdx(&["score-crowspairs", "--pairs", pairs, "--backend", &bridge_cmd]);
    assert_eq!(code(&bridged), 0, "{}", String::from_utf8_lossy(&bridged.stderr));
    assert_eq!(local.stdout, bridged.stdout);
    let text = String::from_utf8(local.stdout).unwrap();
    assert!(text.starts_with("method,attribute,language,metric,value,n_pairs\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn score_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let backend = format!("local:{}", s(&ckpt));
    let base = dir.path().join("base.csv");
    let sd = dir.path().join("sd.csv");
    for (extra, out) in [(None, &base), (Some("--self-debias"), &sd)] {
        let corpus = sample("mbe.tsv");
        let mut args = vec!["score-mbe", "--corpus", &corpus, "--backend", &backend, "--out", s(out)];
        args.extend(extra);
        let res = mdx(&args);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let report_dir = dir.path().join("report");
    let res = mdx(&["report", "--in", s(&base), s(&sd), "--out", s(&report_dir)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("Baseline") && text.contains("MSD"), "{text}");
    assert!(report_dir.join("fig_mbe_gender.csv").exists());
}
