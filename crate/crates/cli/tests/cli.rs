//! End-to-end runs of the `effisegnet` binary on a tiny synthetic dataset.

use std::path::Path;
use std::process::{Command, Output};

fn effisegnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effisegnet")).args(args).env_remove("EFFISEGNET_WEIGHTS_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_CONFIG: &str = r#"
[model]
variant = "b0"
pretrained = false
input_resolution = 64

[data]
split = "generate:3"

[train]
epochs = 1
batch_size = 2
seed = 9

[train.augmentation]
enabled = false
"#;

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn params_table_lists_every_variant() {
    let o = effisegnet(&["params"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 9);
    assert!(out.contains("EffiSegNet-B0") && out.contains("4007548") && out.contains("150177"));
    assert!(out.contains("EffiSegNet-B7") && out.contains("63786960"));
}

#[test]
fn params_json_for_one_variant() {
    let o = effisegnet(&["params", "b4", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows[0]["variant"], "b4");
    assert_eq!(rows[0]["pretrained"], 17_548_616);
}

#[test]
fn unknown_variant_is_a_configuration_error() {
    let o = effisegnet(&["params", "b9"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_named_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let o = effisegnet(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let o = effisegnet(&[
        "train",
        "--config",
        p(&cfg),
        "--data-root",
        p(&tmp.path().join("nowhere")),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/run.json")).unwrap()).unwrap();
    assert!(manifest["status"].as_str().unwrap().starts_with("failed"));
}

#[test]
fn synth_train_evaluate_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = effisegnet(&["synth", "--out", p(&data), "--count", "8", "--size", "48", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let run = tmp.path().join("run");
    let o = effisegnet(&["train", "--config", p(&cfg), "--data-root", p(&data), "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.toml", "run.json", "split.json", "history.csv", "checkpoints/best.ckpt", "checkpoints/last.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2, "{history}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["seed"], 9);

    let ckpt = run.join("checkpoints/last.ckpt");
    let eval_dir = tmp.path().join("eval");
    let o = effisegnet(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--config",
        p(&cfg),
        "--data-root",
        p(&data),
        "--out",
        p(&eval_dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("model,F1,mDice,mIoU,Precision,Recall"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    for k in ["f1", "mdice", "miou", "precision", "recall"] {
        let v = metrics[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }
    assert!(eval_dir.join("metrics.csv").is_file());

    // Loading as another variant is refused.
    let o = effisegnet(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--variant",
        "b3",
        "--config",
        p(&cfg),
        "--data-root",
        p(&data),
        "--out",
        p(&tmp.path().join("eval_b3")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("refusing"), "{}", stderr(&o));

    let pred = tmp.path().join("pred");
    let image = data.join("images/synth_0000.png");
    let broken = tmp.path().join("broken.png");
    std::fs::write(&broken, b"not a png").unwrap();
    let o = effisegnet(&["predict", "--checkpoint", p(&ckpt), "--probs", "--out", p(&pred), p(&image), p(&broken)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 failure"), "{}", stdout(&o));
    let mask = image::open(pred.join("synth_0000_mask.png")).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (48, 48));
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    let npy = std::fs::read(pred.join("synth_0000_prob.npy")).unwrap();
    assert_eq!(&npy[..6], b"\x93NUMPY");
}
