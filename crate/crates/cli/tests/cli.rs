use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxrnnt::dataset::{read_manifest, Condition, UtteranceRecord};
use ndarray::Array2;

const CONFIG: &str = "\
[model]
encoder_layers = 1
encoder_units = 8
prediction_units = 8
joint_units = 8
[train]
batch_size = 4
total_steps = 20
checkpoint_every = 10
keep_checkpoints = 5
[data]
n_train = 20
n_dev = 5
n_test = 5
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("run.toml"), CONFIG).unwrap();
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ctxrnnt"))
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("CTXRNNT_CONFIG")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn datagen(&self) {
        self.ok(&["datagen", "--out", "data"]);
    }

    fn train(&self, mode: &str, out: &str) -> PathBuf {
        self.ok(&["train", "--train", "data/train.manifest", "--dev", "data/dev.manifest", "--out", out, "--mode", mode]);
        self.path(out).join("best.sgck")
    }
}

fn test_records(ws: &Workspace) -> Vec<UtteranceRecord> {
    read_manifest(&ws.path("data/test.manifest")).unwrap()
}

#[test]
fn empty_training_set_is_an_error() {
    let ws = Workspace::new();
    let out = ws.run(&["datagen", "--out", "data", "--n", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_train = 0"));
}

#[test]
fn config_prints_effective_values() {
    let ws = Workspace::new();
    let text = ws.ok(&["config"]);
    assert!(text.contains("encoder_units = 8"));
    assert!(text.contains("total_steps = 20"));
}

#[test]
fn invalid_config_is_reported() {
    let ws = Workspace::new();
    fs::write(ws.path("run.toml"), "[train]\nbogus = 1\n").unwrap();
    let out = ws.run(&["config"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn datagen_is_reproducible() {
    let ws = Workspace::new();
    ws.datagen();
    ws.ok(&["datagen", "--out", "again"]);
    for f in ["train.manifest", "dev.manifest", "test.manifest"] {
        assert_eq!(
            fs::read(ws.path("data").join(f)).unwrap(),
            fs::read(ws.path("again").join(f)).unwrap(),
            "{f}"
        );
    }
    ws.ok(&["datagen", "--out", "other", "--seed", "9"]);
    assert_ne!(
        fs::read(ws.path("data/train.manifest")).unwrap(),
        fs::read(ws.path("other/train.manifest")).unwrap()
    );
}

#[test]
fn train_eval_saliency_round_trip() {
    let ws = Workspace::new();
    ws.datagen();
    let stdout = ws.ok(&["train", "--train", "data/train.manifest", "--dev", "data/dev.manifest", "--out", "full", "--mode", "full"]);
    assert!(stdout.contains("mode: full_utterance"));
    assert!(stdout.contains("mean batch wall time"));
    let best = ws.path("full/best.sgck");
    assert!(best.exists());
    let log = fs::read_to_string(ws.path("full/train.log")).unwrap();
    assert_eq!(log.lines().count(), 20);

    // The same checkpoint on both sides gives identical rates.
    let b = best.to_str().unwrap();
    ws.ok(&["eval", "--base", b, "--new", b, "--manifest", "data/test.manifest", "--json", "report.json", "--decodes", "dec"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.path("report.json")).unwrap()).unwrap();
    let overall = &report["rows"][0];
    assert_eq!(overall["condition"], "overall");
    assert_eq!(overall["baseline_rate"], overall["system_rate"]);
    assert_eq!(
        fs::read(ws.path("dec/base.decodes.jsonl")).unwrap(),
        fs::read(ws.path("dec/new.decodes.jsonl")).unwrap()
    );

    let first = &test_records(&ws)[0];
    let utt = first.id.clone();
    let seg = first.labeled_segments().next().unwrap().0.to_string();
    let args = |out: &'static str| ["saliency", "--checkpoint", b, "--manifest", "data/test.manifest", "--utterance", &utt, "--segment", &seg, "--out", out].map(str::to_owned);
    let a1 = args("s1.tsv");
    let a2 = args("s2.tsv");
    ws.ok(&a1.iter().map(String::as_str).collect::<Vec<_>>());
    ws.ok(&a2.iter().map(String::as_str).collect::<Vec<_>>());
    let s1 = fs::read(ws.path("s1.tsv")).unwrap();
    assert_eq!(s1, fs::read(ws.path("s2.tsv")).unwrap());
    assert!(String::from_utf8(s1).unwrap().starts_with("frame\ttime_s\tgrad_norm"));

    let out = ws.run(&["saliency", "--checkpoint", b, "--manifest", "data/test.manifest", "--utterance", "nope", "--segment", "0", "--out", "x.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`nope`"));
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let ws = Workspace::new();
    ws.datagen();
    ws.train("segmented", "straight");
    ws.ok(&["train", "--train", "data/train.manifest", "--out", "resumed", "--mode", "segmented", "--steps", "10"]);
    let stdout = ws.ok(&["train", "--train", "data/train.manifest", "--out", "resumed", "--mode", "segmented", "--resume"]);
    assert!(stdout.contains("steps: 20 (10 run now)"), "{stdout}");
    let name = "ckpt-00000020.sgck";
    assert_eq!(
        fs::read(ws.path("straight").join(name)).unwrap(),
        fs::read(ws.path("resumed").join(name)).unwrap()
    );
    assert_eq!(fs::read_to_string(ws.path("resumed/train.log")).unwrap().lines().count(), 20);
}

fn manifest_features(path: &Path) -> Vec<Array2<f32>> {
    read_manifest(path).unwrap().into_iter().map(|r| r.features.frames).collect()
}

#[test]
fn perturb_with_unit_impulse_keeps_features() {
    let ws = Workspace::new();
    ws.datagen();
    fs::write(ws.path("unit.txt"), "1.0\n").unwrap();
    let stdout = ws.ok(&["perturb", "--input", "data/test.manifest", "--ir", "unit.txt", "--scope", "full", "--output", "unit.manifest"]);
    assert!(stdout.starts_with("15 utterances"), "{stdout}");
    assert_eq!(
        manifest_features(&ws.path("data/test.manifest")),
        manifest_features(&ws.path("unit.manifest"))
    );
    let perturbed = read_manifest(&ws.path("unit.manifest")).unwrap();
    assert!(perturbed.iter().all(|r| r.conditions.contains(&Condition::ReverbFull)));

    fs::write(ws.path("room.txt"), "1.0\n0.0\n0.6\n-0.3\n0.2\n").unwrap();
    ws.ok(&["perturb", "--input", "data/test.manifest", "--ir", "room.txt", "--scope", "segments", "--output", "room.manifest"]);
    assert_ne!(
        manifest_features(&ws.path("data/test.manifest")),
        manifest_features(&ws.path("room.manifest"))
    );
}

#[test]
fn missing_inputs_fail_cleanly() {
    let ws = Workspace::new();
    let out = ws.run(&["train", "--train", "absent.manifest", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.manifest"));
}
