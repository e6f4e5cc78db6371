use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canbnn::FeaturizerConfig;
use canbnn_cli::{CHECKPOINT_FILE, DETECT_HEADER, TEST_METRICS_FILE, TRAIN_LOG_FILE};

const SCENARIO: &str = r#"
duration = 20.0
seed = 4

[[benign]]
id = 0x100
period = 0.01
payload = [{ kind = "counter" }, { kind = "const", value = 7 }]

[[benign]]
id = 0x200
period = 0.02
payload = [{ kind = "walk", start = 100, min = 80, max = 120, max_step = 2 }, { kind = "random" }]

[[benign]]
id = 0x300
period = 0.05
payload = [{ kind = "const", value = 1 }, { kind = "const", value = 2 }, { kind = "const", value = 3 }]

[[benign]]
id = 0x400
period = 0.1
payload = []

[[attack]]
kind = "flooding"
id = 0
rate = 500.0
window = [8.0, 12.0]
"#;

fn canbnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canbnn"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn canbnn")
}

fn ok(args: &[&str]) -> Output {
    let out = canbnn(args);
    assert!(
        out.status.success(),
        "canbnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = canbnn(args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "canbnn {args:?}: {stderr}");
    assert!(stderr.contains("error:"), "{stderr}");
    stderr
}

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn new() -> Self {
        Workdir {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    /// Capture, featurizer and trained model directory for the small scenario.
    fn trained(&self, mode: &str) -> (String, String, PathBuf) {
        let (scenario, capture, featurizer, model) =
            (self.path("s.toml"), self.path("c.csv"), self.path("f.toml"), self.path("model"));
        fs::write(&scenario, SCENARIO).unwrap();
        ok(&["generate", "--scenario", &scenario, "--out", &capture]);
        ok(&["fit", "--data", &capture, "--out", &featurizer]);
        ok(&[
            "train", "--data", &capture, "--featurizer", &featurizer, "--mode", mode, "--epochs", "2", "--out", &model,
        ]);
        (capture, featurizer, PathBuf::from(model))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_reproducible_and_seeded() {
    let w = Workdir::new();
    let (a, b, c) = (w.path("a.csv"), w.path("b.csv"), w.path("c.csv"));
    ok(&["generate", "--preset", "fuzzing", "--seed", "1", "--out", &a]);
    ok(&["generate", "--preset", "fuzzing", "--seed", "1", "--out", &b]);
    ok(&["generate", "--preset", "fuzzing", "--seed", "2", "--out", &c]);
    let (a, b, c) = (fs::read(a).unwrap(), fs::read(b).unwrap(), fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with(b"timestamp,can_id,dlc,payload,label\n"));
}

#[test]
fn fit_brackets_every_benign_period() {
    let w = Workdir::new();
    let (capture, featurizer) = (w.path("c.csv"), w.path("f.toml"));
    ok(&["generate", "--preset", "benign", "--seed", "6", "--out", &capture]);
    ok(&["fit", "--data", &capture, "--out", &featurizer]);
    let config = FeaturizerConfig::from_toml(&fs::read_to_string(&featurizer).unwrap()).unwrap();
    assert_eq!(config.dictionary.len(), 16);
    assert_eq!(config.input_width(), 73);
    assert!(config.thres_1 < 0.01, "{}", config.thres_1);
    assert!(config.thres_2 > 0.1, "{}", config.thres_2);
}

#[test]
fn fit_with_fixed_thresholds() {
    let w = Workdir::new();
    let (capture, featurizer) = (w.path("c.csv"), w.path("f.toml"));
    ok(&["generate", "--preset", "benign", "--seed", "6", "--out", &capture]);
    ok(&["fit", "--data", &capture, "--thres1", "0.004", "--thres2", "0.2", "--out", &featurizer]);
    let config = FeaturizerConfig::from_toml(&fs::read_to_string(&featurizer).unwrap()).unwrap();
    assert_eq!((config.thres_1, config.thres_2), (0.004, 0.2));
    fails_with(&["fit", "--data", &capture, "--thres1", "0.2", "--thres2", "0.2", "--out", &featurizer], 2);
}

#[test]
fn too_many_ids_for_the_code_width() {
    let w = Workdir::new();
    let capture = w.path("many.csv");
    let mut text = String::from("timestamp,can_id,dlc,payload,label\n");
    for round in 0..3 {
        for id in 0..70u32 {
            text.push_str(&format!("{}.{:03},{:03X},1,00,0\n", round, id * 10, 0x100 + id));
        }
    }
    fs::write(&capture, text).unwrap();
    let stderr = fails_with(&["fit", "--data", &capture, "--bit-width", "6", "--out", &w.path("f.toml")], 2);
    assert!(stderr.contains("70"), "{stderr}");
    ok(&["fit", "--data", &capture, "--bit-width", "7", "--out", &w.path("f.toml")]);
}

#[test]
fn exit_codes_follow_error_category() {
    let w = Workdir::new();
    let (capture, featurizer, model) = w.trained("binary");
    fails_with(&["fit", "--data", &w.path("missing.csv"), "--out", &w.path("x.toml")], 3);
    fails_with(
        &["train", "--data", &capture, "--featurizer", &featurizer, "--lr", "0", "--out", &w.path("m2")],
        2,
    );
    fs::write(w.path("bad.csv"), "timestamp,can_id,dlc,payload,label\n0.1,XYZ,1,00,0\n").unwrap();
    fails_with(&["fit", "--data", &w.path("bad.csv"), "--out", &w.path("x.toml")], 3);

    // A featurizer fitted with other thresholds no longer matches the model.
    let other = w.path("other.toml");
    ok(&["fit", "--data", &capture, "--thres1", "0.001", "--thres2", "0.5", "--out", &other]);
    let ckpt = model.join(CHECKPOINT_FILE);
    let stderr = fails_with(
        &["detect", "--data", &capture, "--model", s(&ckpt), "--featurizer", &other, "--out", &w.path("d.csv")],
        2,
    );
    assert!(stderr.contains("featurizer"), "{stderr}");
}

#[test]
fn train_pack_detect_and_eval() {
    let w = Workdir::new();
    let (capture, featurizer, model) = w.trained("binary");
    for file in [CHECKPOINT_FILE, TRAIN_LOG_FILE, TEST_METRICS_FILE] {
        assert!(model.join(file).exists(), "{file}");
    }
    let log = fs::read_to_string(model.join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,val_loss,lr,elapsed_s"));
    assert_eq!(log.lines().count(), 3);

    let ckpt = model.join(CHECKPOINT_FILE);
    let packed = w.path("model.pack");
    ok(&["pack", "--checkpoint", s(&ckpt), "--out", &packed]);
    assert!(fs::metadata(&packed).unwrap().len() <= 16 * 1024);
    fails_with(&["pack", "--checkpoint", &packed, "--out", &w.path("again.pack")], 2);

    let (from_ckpt, from_packed) = (w.path("d1.csv"), w.path("d2.csv"));
    ok(&["detect", "--data", &capture, "--model", s(&ckpt), "--featurizer", &featurizer, "--out", &from_ckpt]);
    ok(&["detect", "--data", &capture, "--model", &packed, "--featurizer", &featurizer, "--out", &from_packed]);
    let rows = fs::read_to_string(&from_ckpt).unwrap();
    assert_eq!(rows, fs::read_to_string(&from_packed).unwrap());
    let frames = fs::read_to_string(&capture).unwrap().lines().count() - 1;
    assert_eq!(rows.lines().next(), Some(DETECT_HEADER));
    assert_eq!(rows.lines().count(), frames + 1);
    for line in rows.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        let p: f64 = fields[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(fields[4] == "0" || fields[4] == "1");
    }

    let metrics = w.path("m.json");
    ok(&["eval", "--data", &capture, "--model", &packed, "--featurizer", &featurizer, "--holdout", "--out", &metrics]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(json["accuracy"].as_f64().unwrap() > 0.9, "{json}");
    assert_eq!(json["averaging"], "binary");
}

#[test]
fn multiclass_on_two_class_data_warns_and_trains() {
    let w = Workdir::new();
    let (scenario, capture, featurizer, model) =
        (w.path("s.toml"), w.path("c.csv"), w.path("f.toml"), w.path("model"));
    fs::write(&scenario, SCENARIO).unwrap();
    ok(&["generate", "--scenario", &scenario, "--out", &capture]);
    ok(&["fit", "--data", &capture, "--out", &featurizer]);
    let out = ok(&[
        "train", "--data", &capture, "--featurizer", &featurizer, "--mode", "multiclass", "--epochs", "1", "--out", &model,
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("two classes"), "{stderr}");
    let bytes = fs::read(Path::new(&model).join(CHECKPOINT_FILE)).unwrap();
    let ckpt = canbnn::bnn::Checkpoint::read_from(bytes.as_slice()).unwrap();
    assert_eq!(ckpt.model.n_classes(), 2);
    assert_eq!(ckpt.model.output_width(), 2);
}
