//! Drives the `mvh` binary end to end on the shipped tiny config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

const STAGES: [&str; 6] = [
    "gen-data",
    "pretrain-encoder",
    "finetune-concepts",
    "train-decoder",
    "evaluate",
    "visualize",
];

fn tiny_config() -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.conf");
    std::fs::read_to_string(p).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn mvh(stage: &str, config: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_mvh"))
        .arg(stage)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn run_all(config: &Path, out: &Path) {
    for s in STAGES {
        let (code, err) = mvh(s, config, out, &[]);
        assert_eq!(code, 0, "{s}: {err}");
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn every_stage_succeeds_and_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.conf", &tiny_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_all(&cfg, &a);
    run_all(&cfg, &b);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{} differs between identical runs", k.display());
    }
    for want in ["encoder.ckpt", "concepts.ckpt", "decoder.ckpt", "scores.csv", "data/dataset.txt", "heatmaps/uncertainty.txt"] {
        assert!(fa.contains_key(Path::new(want)), "missing {want}");
    }
    let scores = String::from_utf8(fa[Path::new("scores.csv")].clone()).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next().unwrap(), "system,seed,bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,avg_auc");
    assert!(lines.next().unwrap().contains(",7,"), "{scores}");
    // 4 default test samples × 2 views × labels {0, 3}, each as PGM and CSV.
    let heatmaps = fa.keys().filter(|k| k.starts_with("heatmaps") && k.extension().is_some_and(|e| e == "pgm")).count();
    assert_eq!(heatmaps, 16);
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.conf", &tiny_config());
    let out = tmp.path().join("run");
    let (code, err) = mvh("gen-data", &cfg, &out, &["--seed", "123"]);
    assert_eq!(code, 0, "{err}");
    let manifest = std::fs::read_to_string(out.join("data/dataset.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "seed = 123"), "{manifest}");
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let good = write_config(tmp.path(), "tiny.conf", &tiny_config());
    let cases = [
        ("unknown key", format!("{}\nwarp_drive = on\n", tiny_config())),
        ("bad number", tiny_config().replace("n_samples = 24", "n_samples = many")),
        ("too few samples", tiny_config().replace("n_samples = 24", "n_samples = 3")),
        ("label out of range", tiny_config().replace("visualize_labels = 0, 3", "visualize_labels = 14")),
        ("unknown fusion", format!("{}\nfusion = sideways\n", tiny_config())),
    ];
    for (what, text) in cases {
        let cfg = write_config(tmp.path(), "bad.conf", &text);
        let (code, err) = mvh("gen-data", &cfg, &out, &[]);
        assert_eq!(code, 2, "{what}: {err}");
    }
    assert_eq!(mvh("train-everything", &good, &out, &[]).0, 2);
    let o = Command::new(env!("CARGO_BIN_EXE_mvh")).arg("gen-data").output().unwrap();
    assert_eq!(o.status.code(), Some(2), "missing --config");
}

#[test]
fn stage_inputs_are_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "tiny.conf", &tiny_config());
    for s in &STAGES[..3] {
        assert_eq!(mvh(s, &cfg, &out, &[]).0, 0);
    }
    // An encoder of another width must not accept these checkpoints.
    let wider = write_config(tmp.path(), "wider.conf", &tiny_config().replace("channels = 2, 4, 4", "channels = 2, 4, 6"));
    let (code, err) = mvh("finetune-concepts", &wider, &out, &[]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("different architecture"), "{err}");

    let unknown = write_config(tmp.path(), "ids.conf", &format!("{}\nvisualize_ids = nobody\n", tiny_config()));
    let (code, err) = mvh("visualize", &unknown, &out, &[]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("s000"), "error should list available ids: {err}");

    // The decoder checkpoint does not exist yet.
    let (code, _) = mvh("evaluate", &cfg, &out, &[]);
    assert_ne!(code, 0);
}

#[test]
fn divergent_training_aborts_with_3_and_keeps_last_good_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "tiny.conf", &tiny_config());
    assert_eq!(mvh("gen-data", &cfg, &out, &[]).0, 0);
    let boom = write_config(
        tmp.path(),
        "boom.conf",
        &tiny_config().replace("\nepochs = 1\n", "\nepochs = 2\nlearning_rate = 1e300\n"),
    );
    let (code, err) = mvh("pretrain-encoder", &boom, &out, &[]);
    assert_eq!(code, 3, "{err}");
    let saved = std::fs::read(out.join("pretrain-encoder.last_good.ckpt")).unwrap();
    let ckpt = mvh::checkpoint::decode(&saved).unwrap();
    assert_eq!(ckpt.seed, 7);
    assert!(ckpt.state.params.iter().all(|(_, t)| t.is_finite()));
    assert!(!out.join("encoder.ckpt").exists());
}
