use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use retrofit_core::artifact::ModelArtifact;
use retrofit_core::ingest::load_dataset;
use retrofit_core::pipeline::TestIndexManifest;
use retrofit_core::DatasetSchema;
use serde_json::Value;

fn fixture_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/latvia_fixture_200.csv")
}

fn retrofit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retrofit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = retrofit(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("prep");
    ok(&["ingest", "--data", s(&fixture_csv()), "--out-dir", s(&out), "--seed", "3"]);
    (out.join("clean.csv"), out.join("test_index.json"))
}

#[test]
fn ingest_train_evaluate_explain() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, index) = ingest(dir.path());
    let manifest: TestIndexManifest = serde_json::from_str(&std::fs::read_to_string(&index).unwrap()).unwrap();
    assert_eq!(manifest.n_records, 200);
    assert_eq!(manifest.test.len(), 50);

    let model = dir.path().join("model.json");
    let table = ok(&[
        "train", "--data", s(&clean), "--test-index", s(&index), "--out", s(&model), "--max-epochs", "30",
    ]);
    for row in ["Accuracy", "Precision", "Recall", "F1 score", "Macro avg"] {
        assert!(table.contains(row), "{table}");
    }
    let artifact = ModelArtifact::load(&model).unwrap();
    assert_eq!(artifact.provenance.test_index_digest.as_deref(), Some(manifest.digest.as_str()));
    assert_eq!(artifact.provenance.synthetic_rows, 0);

    let eval = ok(&["evaluate", "--model", s(&model), "--data", s(&clean), "--test-index", s(&index)]);
    assert!(eval.starts_with("Metric"), "{eval}");

    let svg = dir.path().join("w.svg");
    ok(&[
        "explain", "--model", s(&model), "--data", s(&clean), "--rows", "4", "--format", "svg", "--out", s(&svg),
    ]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let csv = ok(&["explain", "--model", s(&model), "--data", s(&clean), "--rows", "0,1", "--format", "csv"]);
    // header plus 2 rows x 4 labels x 13 inputs
    assert_eq!(csv.lines().count(), 1 + 2 * 4 * 13);
    let json: Value = serde_json::from_str(&ok(&["explain", "--model", s(&model), "--data", s(&clean), "--rows", "2"])).unwrap();
    assert_eq!(json[0]["explanation"]["labels"].as_array().unwrap().len(), 4);
}

#[test]
fn augmented_training_keeps_synthetic_rows_out_of_test() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, index) = ingest(dir.path());
    let synth = dir.path().join("synth.csv");
    let gen_manifest = dir.path().join("generation.json");
    ok(&[
        "generate", "--data", s(&clean), "--test-index", s(&index), "--budget", "60", "--epochs", "5", "--out",
        s(&synth), "--manifest", s(&gen_manifest),
    ]);
    let schema = DatasetSchema::latvian();
    let synthetic = load_dataset(&synth, &schema).unwrap().into_strict().unwrap();
    assert!(!synthetic.is_empty());

    let model = dir.path().join("aug.json");
    ok(&[
        "train", "--data", s(&clean), "--test-index", s(&index), "--augment", s(&synth), "--generation-manifest",
        s(&gen_manifest), "--out", s(&model), "--max-epochs", "10",
    ]);
    let artifact = ModelArtifact::load(&model).unwrap();
    assert_eq!(artifact.provenance.synthetic_rows, synthetic.len());
    assert_eq!(artifact.provenance.real_rows, 150);
    assert!(artifact.provenance.generation_manifest_digest.is_some());

    // a tampered index file is refused before training
    let mut manifest: Value = serde_json::from_str(&std::fs::read_to_string(&index).unwrap()).unwrap();
    manifest["test"][0] = Value::from(manifest["test"][0].as_u64().unwrap() + 1);
    let bad = dir.path().join("bad_index.json");
    std::fs::write(&bad, manifest.to_string()).unwrap();
    let out = retrofit(&[
        "train", "--data", s(&clean), "--test-index", s(&bad), "--augment", s(&synth), "--out",
        s(&dir.path().join("x.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("isolation"));
}

#[test]
fn tune_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, index) = ingest(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "tune", "--data", s(&clean), "--test-index", s(&index), "--trials", "10", "--seed", "1", "--max-epochs",
            "8", "--out", s(&out),
        ]);
        let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        (v["best_trial"].clone(), v["best_config"].clone(), v["best_value"].clone())
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn evaluate_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    let truth = dir.path().join("truth.csv");
    std::fs::write(&pred, "a,b\n0.9,0\n0.2,1\n0.7,1\n0.4,0\n").unwrap();
    std::fs::write(&truth, "a,b\n1,0\n0,1\n0,1\n1,1\n").unwrap();
    let table = ok(&["evaluate", "--predictions", s(&pred), "--truth", s(&truth)]);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Metric"));
    assert!(lines.iter().any(|l| l.starts_with("Accuracy")));
    let out = retrofit(&["evaluate", "--predictions", s(&pred)]);
    assert!(!out.status.success());
}

#[test]
fn conflicting_flags_are_rejected() {
    let out = retrofit(&["generate", "--data", "a", "--test-index", "b", "--budget", "5", "--equalize", "--out", "c", "--manifest", "d"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot be used with"));
}

#[test]
fn validate_map_classifies() {
    let out = ok(&["validate-map", "Cavity wall insulation", "Hot water cylinder thermostat"]);
    assert!(out.contains("building_fabric"));
    assert!(out.contains("dhw_upgrades"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("map.json");
    std::fs::write(&bad, r#"{"categories": {"building_fabric": ["x"]}}"#).unwrap();
    assert!(!retrofit(&["validate-map", "--map", s(&bad)]).status.success());
}
