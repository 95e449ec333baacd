use std::collections::BTreeMap;

use retrofit_core::artifact::{ArtifactError, ModelArtifact, Provenance, FORMAT_VERSION};
use retrofit_core::explain::Method;
use retrofit_core::features::FeatureOptions;
use retrofit_core::fixture::latvian_fixture;
use retrofit_core::ingest::SplitSpec;
use retrofit_core::nn::MlpConfig;
use retrofit_core::pipeline::{
    augmented_sets, baseline_sets, fit_model, make_split, predict, PipelineError, TestIndexManifest,
};
use retrofit_core::service::{RecommendRequest, Recommender, RequestError};
use retrofit_core::{BuildingRecord, Cell, DatasetSchema};
use serde_json::Value;

fn trained_artifact() -> (ModelArtifact, Vec<BuildingRecord>) {
    let schema = DatasetSchema::latvian();
    let rows = latvian_fixture();
    let (idx, manifest) = make_split(rows.len(), SplitSpec::new(0)).unwrap();
    let sets = baseline_sets(&rows, &idx, &manifest).unwrap();
    let mut cfg = MlpConfig::new(vec![16, 8], 1e-2, 32, 0);
    cfg.max_epochs = 30;
    let fitted = fit_model(&sets.train, &sets.val, &schema, &FeatureOptions::latvian(), &cfg).unwrap();
    let provenance = Provenance {
        real_rows: sets.real_rows,
        test_index_digest: Some(manifest.digest.clone()),
        note: "fixture".into(),
        ..Default::default()
    };
    let artifact = fitted.into_artifact(&schema, &cfg, provenance).unwrap();
    (artifact, sets.test)
}

fn request_for(schema: &DatasetSchema, record: &BuildingRecord) -> RecommendRequest {
    let target = schema.energy.as_ref().unwrap().target_class.clone();
    let mut features = BTreeMap::new();
    let mut target_energy_class = None;
    for i in schema.feature_indices() {
        let name = &schema.columns[i].name;
        let v = match &record.values[i] {
            Cell::Number(x) => serde_json::json!(x),
            Cell::Bool(b) => serde_json::json!(b),
            Cell::Category(c) => serde_json::json!(c),
            Cell::Null => Value::Null,
        };
        if *name == target {
            target_energy_class = v.as_str().map(str::to_string);
        } else {
            features.insert(name.clone(), v);
        }
    }
    RecommendRequest {
        features,
        target_energy_class,
    }
}

#[test]
fn artifact_round_trip_predictions_match() {
    let (artifact, test) = trained_artifact();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    artifact.save(&path).unwrap();
    let loaded = ModelArtifact::load_for(&path, &DatasetSchema::latvian()).unwrap();
    assert_eq!(loaded, artifact);
    let schema = DatasetSchema::latvian();
    let a = predict(&artifact.transform, &artifact.model, &test, &schema).unwrap();
    let b = predict(&loaded.transform, &loaded.model, &test, &schema).unwrap();
    let delta = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(delta < 1e-12, "{delta}");
    assert_eq!(loaded.id(), artifact.id());
}

#[test]
fn truncated_artifact_is_a_checksum_error() {
    let (artifact, _) = trained_artifact();
    let text = artifact.to_json();
    for cut in [text.len() / 2, text.len() - 1, 40] {
        let err = ModelArtifact::from_json(&text[..cut]).unwrap_err();
        assert!(matches!(err, ArtifactError::Checksum(_)), "cut {cut}: {err}");
    }
}

#[test]
fn tampered_payload_is_a_checksum_error() {
    let (artifact, _) = trained_artifact();
    let text = artifact.to_json().replacen("\"fixture\"", "\"fixturE\"", 1);
    assert!(matches!(ModelArtifact::from_json(&text), Err(ArtifactError::Checksum(_))));
}

#[test]
fn newer_format_version_is_rejected() {
    let (artifact, _) = trained_artifact();
    let text = artifact
        .to_json()
        .replacen(&format!("\"format_version\":{FORMAT_VERSION}"), "\"format_version\":99", 1);
    match ModelArtifact::from_json(&text) {
        Err(ArtifactError::Version { found: 99, supported }) => assert_eq!(supported, FORMAT_VERSION),
        other => panic!("{other:?}"),
    }
    // a newer file that is also truncated still reports the version
    let cut = &text[..text.len() / 2];
    assert!(matches!(ModelArtifact::from_json(cut), Err(ArtifactError::Checksum(_)) | Err(ArtifactError::Version { .. })));
}

#[test]
fn loading_against_another_schema_fails() {
    let (artifact, _) = trained_artifact();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    artifact.save(&path).unwrap();
    let mut other = DatasetSchema::latvian();
    other.version += 1;
    assert!(matches!(ModelArtifact::load_for(&path, &other), Err(ArtifactError::Fingerprint { .. })));
}

#[test]
fn test_index_manifest_detects_leaks_and_edits() {
    let rows = latvian_fixture();
    let (idx, manifest) = make_split(rows.len(), SplitSpec::new(4)).unwrap();
    manifest.check(rows.len(), &idx).unwrap();

    let mut leaky = idx.clone();
    leaky.train.push(manifest.test[0]);
    assert!(matches!(manifest.check(rows.len(), &leaky), Err(PipelineError::Isolation(_))));

    let mut edited: TestIndexManifest = manifest.clone();
    edited.test.pop();
    assert!(matches!(edited.verify(), Err(PipelineError::Isolation(_))));

    let (other_idx, _) = make_split(rows.len(), SplitSpec::new(5)).unwrap();
    assert!(matches!(
        augmented_sets(&rows, &other_idx, &manifest, &[], 0),
        Err(PipelineError::Isolation(_))
    ));
    assert!(manifest.check(rows.len() + 1, &idx).is_err());
}

#[test]
fn augmented_sets_keep_the_recorded_test_rows() {
    let rows = latvian_fixture();
    let (idx, manifest) = make_split(rows.len(), SplitSpec::new(2)).unwrap();
    let base = baseline_sets(&rows, &idx, &manifest).unwrap();
    let synthetic: Vec<_> = rows.iter().take(30).cloned().collect();
    let aug = augmented_sets(&rows, &idx, &manifest, &synthetic, 9).unwrap();
    assert_eq!(aug.test, base.test);
    assert_eq!(aug.train.len() + aug.val.len(), base.train.len() + base.val.len() + 30);
    assert_eq!(aug.synthetic_rows, 30);
    assert_eq!(aug.test_index_digest, manifest.digest);
}

#[test]
fn recommend_matches_direct_prediction() {
    let (artifact, test) = trained_artifact();
    let schema = artifact.schema.clone();
    let probs = predict(&artifact.transform, &artifact.model, &test, &schema).unwrap();
    let rec = Recommender::new(artifact);
    for (k, record) in test.iter().enumerate().take(10) {
        let resp = rec.recommend(&request_for(&schema, record)).unwrap();
        assert_eq!(resp.recommendations.len(), 4);
        assert_eq!(resp.model_id, rec.id());
        for (j, r) in resp.recommendations.iter().enumerate() {
            assert!((r.probability - probs[[k, j]]).abs() < 1e-12);
            assert_eq!(r.recommended, r.probability >= resp.threshold);
        }
    }
}

#[test]
fn identical_requests_get_identical_responses() {
    let (artifact, test) = trained_artifact();
    let schema = artifact.schema.clone();
    let rec = Recommender::new(artifact);
    let req = request_for(&schema, &test[0]);
    assert_eq!(rec.recommend(&req).unwrap(), rec.recommend(&req).unwrap());
    assert_eq!(rec.explain(&req).unwrap(), rec.explain(&req).unwrap());
}

#[test]
fn request_errors_name_the_field() {
    let (artifact, test) = trained_artifact();
    let schema = artifact.schema.clone();
    let rec = Recommender::new(artifact);
    let good = request_for(&schema, &test[0]);

    let mut req = good.clone();
    req.features.remove("Reference area");
    assert_eq!(
        rec.recommend(&req).unwrap_err(),
        RequestError::Missing {
            field: "Reference area".into()
        }
    );

    let mut req = good.clone();
    req.target_energy_class = None;
    assert_eq!(rec.recommend(&req).unwrap_err().field(), "target_energy_class");

    let mut req = good.clone();
    req.target_energy_class = Some("Z".into());
    assert!(matches!(rec.recommend(&req), Err(RequestError::Unseen { .. })));

    let mut req = good.clone();
    req.features.insert("Reference area".into(), serde_json::json!("lots"));
    assert_eq!(rec.recommend(&req).unwrap_err().field(), "Reference area");

    let mut req = good.clone();
    req.features.insert("Colour".into(), serde_json::json!("red"));
    assert_eq!(rec.recommend(&req).unwrap_err(), RequestError::Unknown { field: "Colour".into() });
}

#[test]
fn explanation_adds_up_to_the_recommendation() {
    let (artifact, test) = trained_artifact();
    let schema = artifact.schema.clone();
    assert_eq!(artifact.transform.input_dim(), 13);
    let rec = Recommender::new(artifact);
    let req = request_for(&schema, &test[1]);
    let probs = rec.recommend(&req).unwrap();
    let expl = rec.explain(&req).unwrap();
    assert_eq!(expl.method, Method::Exact);
    assert_eq!(rec.info().explain_method, Method::Exact);
    for (l, r) in expl.labels.iter().zip(&probs.recommendations) {
        let sum: f64 = l.base_value + l.attributions.iter().map(|a| a.phi).sum::<f64>();
        assert!((sum - r.probability).abs() < 1e-6, "{sum} vs {}", r.probability);
        assert!((l.waterfall.final_value - r.probability).abs() < 1e-6);
        assert_eq!(l.category.key, r.category.key);
    }
}

#[test]
fn model_info_lists_inputs_and_target_classes() {
    let (artifact, _) = trained_artifact();
    let rec = Recommender::new(artifact);
    let info = rec.info();
    assert_eq!(info.categories.len(), 4);
    assert_eq!(info.categories[0].key, "building_fabric");
    let target = info.target_class.clone().unwrap();
    assert_eq!(target.column, "Energy class after");
    assert!(target.options.iter().any(|c| c == "A"));
    assert!(info.features.iter().all(|f| f.name != "Energy class after"));
    assert!(info.features.iter().any(|f| f.name == "Reference area" && f.range.is_some()));
    assert_eq!(info.derived_features, vec!["Energy performance delta".to_string()]);
    assert_eq!(info.provenance.note, "fixture");
    let json = serde_json::to_value(&info).unwrap();
    assert!(json["threshold"].as_f64().is_some());
}
