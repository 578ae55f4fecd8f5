use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gatn_core::experiment::{Checkpoint, ExperimentConfig};
use gatn_core::gcn::{Activation, GcnLayerParams};
use gatn_core::model::GatnParams;
use gatn_core::{AdjacencyMatrix, Matrix, Stage};
use tempfile::TempDir;

fn gatn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatn"))
        .args(args)
        .output()
        .expect("spawn gatn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = p(dir, name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn build_corr_two_labels() {
    let dir = TempDir::new().unwrap();
    let labels = write(&dir, "labels.txt", "cat\ndog\n");
    let emb = write(&dir, "emb.txt", "cat 1.0 0.0\ndog 1.0 0.0\n");
    let out = p(&dir, "a.json");
    let o = gatn(&[
        "build-corr",
        "--labels",
        &labels,
        "--embeddings",
        &emb,
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["n"], 2);
    assert_eq!(v["stage"], "A");
    assert_eq!(v["data"][0][1].as_f64(), Some(0.2));
    assert_eq!(v["data"][1][1].as_f64(), Some(0.8));
}

#[test]
fn build_corr_missing_token_names_it() {
    let dir = TempDir::new().unwrap();
    let labels = write(&dir, "labels.txt", "cat\ntraffic light\n");
    let emb = write(&dir, "emb.txt", "cat 1.0 0.0\ntraffic 0.0 1.0\n");
    let o = gatn(&["build-corr", "--labels", &labels, "--embeddings", &emb]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[missing-token]:"), "{err}");
    assert!(err.contains("light"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn build_corr_from_cooccurrence() {
    let dir = TempDir::new().unwrap();
    let labels = write(&dir, "labels.txt", "a\nb\n");
    let samples = write(
        &dir,
        "s.json",
        r#"{"n": 2, "d_feat": 1, "samples": [{"x": [0.0], "y": [1, 1]}, {"x": [0.0], "y": [1, 0]}]}"#,
    );
    let o = gatn(&[
        "build-corr",
        "--labels",
        &labels,
        "--mode",
        "cooc",
        "--samples",
        &samples,
        "--tau",
        "0.6",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // P(b|a) = 0.5 < 0.6, P(a|b) = 1
    assert_eq!(v["data"][0][1].as_f64(), Some(0.0));
    assert_eq!(v["data"][1][0].as_f64(), Some(0.2));
    let o = gatn(&["build-corr", "--labels", &labels, "--mode", "cooc"]);
    assert_eq!(o.status.code(), Some(2));
}

const ONE_EDGE: &str =
    r#"{"n": 3, "stage": "A", "data": [[0.8, 0.1, 0.1], [0.1, 0.8, 0.25], [0.2, 0.0, 0.8]]}"#;

#[test]
fn export_dot_threshold() {
    let dir = TempDir::new().unwrap();
    let adj = write(&dir, "a.json", ONE_EDGE);
    let o = gatn(&["export-dot", "--adj", &adj]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dot = stdout(&o);
    assert_eq!(dot.matches(" -- ").count(), 1);
    assert!(dot.contains("n1 -- n2"));

    let o = gatn(&["export-dot", "--adj", &adj, "--edge-threshold", "0.9"]);
    let dot = stdout(&o);
    assert_eq!(dot.matches(" -- ").count(), 0);
    assert_eq!(dot.matches("[label=").count(), 3);

    let labels = write(&dir, "l.txt", "x\ny\nz\n");
    let o = gatn(&[
        "export-dot",
        "--adj",
        &adj,
        "--labels",
        &labels,
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["nodes"][2]["label"], "z");
    assert_eq!(v["edges"].as_array().unwrap().len(), 1);
}

#[test]
fn export_dot_rejects_bad_json() {
    let dir = TempDir::new().unwrap();
    let adj = write(&dir, "a.json", "{\"n\": 2");
    let o = gatn(&["export-dot", "--adj", &adj]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[json]:"));
}

#[test]
fn eval_perfect_predictions() {
    let dir = TempDir::new().unwrap();
    let n = 3;
    // A = 0 without attention gives A_hat = I, so W = Z W0 = I and logits = x.
    let ck = Checkpoint {
        config: ExperimentConfig {
            attention: false,
            hidden: vec![],
            ..ExperimentConfig::toy()
        },
        labels: vec!["a".into(), "b".into(), "c".into()],
        embeddings: Matrix::identity(n),
        adjacency: AdjacencyMatrix::new(Matrix::zeros(n, n), Stage::Reweighted).unwrap(),
        params: GatnParams::new(
            None,
            vec![GcnLayerParams {
                w: Matrix::identity(n),
                activation: Activation::Identity,
            }],
        ),
    };
    let ck_path = write(&dir, "ck.json", &ck.to_json().unwrap());
    let targets = [[1, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1]];
    let samples: Vec<String> = targets
        .iter()
        .map(|y| {
            let x: Vec<String> = y.iter().map(|&b| format!("{}", 5 * (2 * b - 1))).collect();
            format!(
                "{{\"x\": [{}], \"y\": [{}, {}, {}]}}",
                x.join(", "),
                y[0],
                y[1],
                y[2]
            )
        })
        .collect();
    let data = write(
        &dir,
        "d.json",
        &format!(
            "{{\"n\": 3, \"d_feat\": 3, \"samples\": [{}]}}",
            samples.join(", ")
        ),
    );
    let out = p(&dir, "report.json");
    let o = gatn(&[
        "eval",
        "--checkpoint",
        &ck_path,
        "--dataset",
        &data,
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for key in ["mAP", "CP", "CR", "CF1", "OP", "OR", "OF1"] {
        assert_eq!(v[key].as_f64(), Some(1.0), "{key}");
    }
    assert_eq!(v["per_class_AP"].as_array().unwrap().len(), 3);

    let o = gatn(&[
        "eval",
        "--checkpoint",
        &ck_path,
        "--dataset",
        &data,
        "--topk",
        "1",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["OP"].as_f64(), Some(1.0));
    assert!(v["OR"].as_f64().unwrap() < 1.0);
}

#[test]
fn gradcheck_default_passes() {
    let o = gatn(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    let err: f64 = line
        .split_whitespace()
        .find_map(|t| t.strip_prefix("max_relative_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-4);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_train_eval_pipeline_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "data");
    assert_eq!(
        gatn(&["synth", "--out", &data, "--seed", "5"])
            .status
            .code(),
        Some(0)
    );
    let again = p(&dir, "again");
    assert_eq!(
        gatn(&["synth", "--out", &again, "--seed", "5"])
            .status
            .code(),
        Some(0)
    );
    let first = read_all(Path::new(&data));
    assert_eq!(first.len(), 4);
    assert_eq!(first, read_all(Path::new(&again)));

    let cfg = write(&dir, "cfg.json", r#"{"epochs": 5, "hidden": [8], "h": 2}"#);
    let labels = format!("{data}/labels.txt");
    let emb = format!("{data}/embeddings.txt");
    let train = format!("{data}/train.json");
    let test = format!("{data}/test.json");
    let mut outputs = Vec::new();
    for name in ["ck1.json", "ck2.json"] {
        let ck = p(&dir, name);
        let o = gatn(&[
            "train",
            "--labels",
            &labels,
            "--embeddings",
            &emb,
            "--dataset",
            &train,
            "--config",
            &cfg,
            "--seed",
            "9",
            "--out",
            &ck,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let csv = fs::read_to_string(Path::new(&ck).with_extension("loss.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("epoch,loss"));
        assert_eq!(csv.lines().count(), 6);
        outputs.push((fs::read(&ck).unwrap(), csv));
    }
    assert_eq!(outputs[0], outputs[1]);

    let ck = p(&dir, "ck1.json");
    let o = gatn(&["eval", "--checkpoint", &ck, "--dataset", &test]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["mAP"].as_f64().unwrap() > 0.0);
}

#[test]
fn ablate_writes_four_by_seven_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "cfg.json",
        r#"{"epochs": 20, "hidden": [8], "h": 2, "weight_decay": 0}"#,
    );
    let out = p(&dir, "ablation.csv");
    let o = gatn(&["ablate", "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,mAP,CP,CR,CF1,OP,OR,OF1");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(gatn(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(gatn(&["build-corr"]).status.code(), Some(1));
    assert_eq!(gatn(&["nope"]).status.code(), Some(1));
    assert_eq!(
        gatn(&["build-corr", "--labels", "x", "--mode", "other"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(gatn(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let labels = write(&dir, "labels.txt", "a\n");
    let o = gatn(&[
        "build-corr",
        "--labels",
        &labels,
        "--embeddings",
        &labels,
        "--p",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[invalid]:"), "{}", stderr(&o));
}
