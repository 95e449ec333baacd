#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use retrofit_core::artifact::{ModelArtifact, Provenance};
use retrofit_core::features::FeatureOptions;
use retrofit_core::fixture::latvian_fixture;
use retrofit_core::ingest::SplitSpec;
use retrofit_core::nn::MlpConfig;
use retrofit_core::pipeline::{baseline_sets, fit_model, make_split};
use retrofit_core::service::{RecommendRequest, Recommender};
use retrofit_core::DatasetSchema;

fn recommender() -> &'static Recommender {
    static R: OnceLock<Recommender> = OnceLock::new();
    R.get_or_init(|| {
        let schema = DatasetSchema::latvian();
        let rows = latvian_fixture();
        let (idx, manifest) = make_split(rows.len(), SplitSpec::new(0)).unwrap();
        let sets = baseline_sets(&rows, &idx, &manifest).unwrap();
        let mut cfg = MlpConfig::new(vec![8], 1e-2, 32, 0);
        cfg.max_epochs = 5;
        let fitted = fit_model(&sets.train, &sets.val, &schema, &FeatureOptions::latvian(), &cfg).unwrap();
        let artifact: ModelArtifact = fitted.into_artifact(&schema, &cfg, Provenance::default()).unwrap();
        Recommender::new(artifact)
    })
}

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = serde_json::from_slice::<RecommendRequest>(data) {
        if let Ok(resp) = recommender().recommend(&req) {
            assert!(resp.recommendations.iter().all(|r| (0.0..=1.0).contains(&r.probability)));
        }
    }
});
