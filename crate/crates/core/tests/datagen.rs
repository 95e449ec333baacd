use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use retrofit_core::datagen::{
    equalizing_budget, generate, make_balance_plan, train_gan, BalancePlan, CondSampler, DataTransformer, GanConfig, PlanEntry,
    TrainedGan,
};
use retrofit_core::fixture::latvian_fixture;
use retrofit_core::quality::ks_complement;
use retrofit_core::{BuildingRecord, Cell, ColumnKind, ColumnRole, ColumnSpec, DatasetSchema};
use std::sync::OnceLock;

fn schema_of(columns: Vec<ColumnSpec>) -> DatasetSchema {
    DatasetSchema {
        id: "test".into(),
        version: 1,
        columns,
        value_maps: BTreeMap::new(),
        energy: None,
        null_tokens: vec![],
    }
}

/// Gaussian column plus a balanced binary label.
fn toy_table(n: usize, seed: u64) -> (DatasetSchema, Vec<BuildingRecord>) {
    let schema = schema_of(vec![
        ColumnSpec::new("x", ColumnKind::Numerical, ColumnRole::Feature),
        ColumnSpec::new("flag", ColumnKind::Boolean, ColumnRole::Label),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(10.0, 2.0).unwrap();
    let rows = (0..n)
        .map(|i| BuildingRecord::new(vec![Cell::Number(d.sample(&mut rng)), Cell::Bool(i % 2 == 0)]))
        .collect();
    (schema, rows)
}

fn toy_gan() -> &'static (DatasetSchema, Vec<BuildingRecord>, TrainedGan) {
    static GAN: OnceLock<(DatasetSchema, Vec<BuildingRecord>, TrainedGan)> = OnceLock::new();
    GAN.get_or_init(|| {
        let (schema, rows) = toy_table(400, 7);
        let gan = train_gan(&rows, &schema, &GanConfig { epochs: 200, seed: 3, ..GanConfig::default() }).unwrap();
        (schema, rows, gan)
    })
}

fn fixture_gan() -> &'static (DatasetSchema, Vec<BuildingRecord>, TrainedGan) {
    static GAN: OnceLock<(DatasetSchema, Vec<BuildingRecord>, TrainedGan)> = OnceLock::new();
    GAN.get_or_init(|| {
        let schema = DatasetSchema::latvian();
        let rows = latvian_fixture();
        let gan = train_gan(&rows, &schema, &GanConfig { epochs: 300, seed: 11, ..GanConfig::default() }).unwrap();
        (schema, rows, gan)
    })
}

#[test]
fn round_trip_on_fixture_rows() {
    let schema = DatasetSchema::latvian();
    let rows = latvian_fixture();
    let t = DataTransformer::fit(&rows, &schema, 10, 0.005, 0).unwrap();
    let enc = t.encode(&rows[..100], 1).unwrap();
    let mut worst: f64 = 0.0;
    for (i, r) in rows[..100].iter().enumerate() {
        let back = t.decode_row(enc.row(i).as_slice().unwrap());
        for j in schema.modeled_indices() {
            match (&r.values[j], &back.values[j]) {
                (Cell::Number(a), Cell::Number(b)) => worst = worst.max((a - b).abs()),
                (a, b) => assert_eq!(a, b, "row {i} column {}", schema.columns[j].name),
            }
        }
        for j in schema.indices_with_ignored() {
            assert_eq!(back.values[j], Cell::Null);
        }
    }
    assert!(worst < 1e-6, "max continuous error {worst}");
}

trait Ignored {
    fn indices_with_ignored(&self) -> Vec<usize>;
}

impl Ignored for DatasetSchema {
    fn indices_with_ignored(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&i| self.columns[i].role == ColumnRole::Ignored).collect()
    }
}

#[test]
fn three_category_column_encodes_one_hot() {
    let schema = schema_of(vec![ColumnSpec::new("c", ColumnKind::Categorical, ColumnRole::Feature)]);
    let rows: Vec<BuildingRecord> =
        ["b", "a", "c", "a"].iter().map(|s| BuildingRecord::new(vec![Cell::Category(s.to_string())])).collect();
    let t = DataTransformer::fit(&rows, &schema, 10, 0.005, 0).unwrap();
    assert_eq!(t.output_dim, 3);
    let enc = t.encode(&rows, 0).unwrap();
    assert_eq!(enc.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    assert_eq!(enc.row(2).to_vec(), vec![0.0, 0.0, 1.0]);

    let unseen = BuildingRecord::new(vec![Cell::Category("z".into())]);
    let err = t.encode(&[unseen], 0).unwrap_err().to_string();
    assert!(err.contains('c') && err.contains("\"z\""), "{err}");
}

fn binary_table(columns: &[(&str, f64)], n: usize) -> (DataTransformer, Array2<f64>) {
    let schema = schema_of(
        columns.iter().map(|(name, _)| ColumnSpec::new(name, ColumnKind::Boolean, ColumnRole::Label)).collect(),
    );
    let rows: Vec<BuildingRecord> = (0..n)
        .map(|i| BuildingRecord::new(columns.iter().map(|&(_, p)| Cell::Bool((i as f64) < p * n as f64)).collect()))
        .collect();
    let t = DataTransformer::fit(&rows, &schema, 10, 0.005, 0).unwrap();
    let enc = t.encode(&rows, 0).unwrap();
    (t, enc)
}

#[test]
fn log_frequency_oversamples_minority() {
    let (t, enc) = binary_table(&[("flag", 0.05)], 1000);
    let s = CondSampler::fit(enc.view(), &t);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 100_000;
    let minority = (0..draws).filter(|_| s.sample_cond_vector(&mut rng).unwrap().category == 1).count();
    let rate = minority as f64 / draws as f64;
    // ln(51) / (ln(51) + ln(951)) ≈ 0.365
    assert!(rate > 0.05, "{rate}");
    assert!((rate - 51f64.ln() / (51f64.ln() + 951f64.ln())).abs() < 0.01, "{rate}");
}

#[test]
fn single_category_always_chosen() {
    let schema = schema_of(vec![ColumnSpec::new("c", ColumnKind::Categorical, ColumnRole::Feature)]);
    let rows = vec![BuildingRecord::new(vec![Cell::Category("only".into())]); 5];
    let t = DataTransformer::fit(&rows, &schema, 10, 0.005, 0).unwrap();
    let s = CondSampler::fit(t.encode(&rows, 0).unwrap().view(), &t);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let c = s.sample_cond_vector(&mut rng).unwrap();
        assert_eq!((c.column, c.category), (0, 0));
        assert_eq!(c.vector, vec![1.0]);
    }
}

#[test]
fn two_columns_chosen_evenly() {
    let (t, enc) = binary_table(&[("a", 0.3), ("b", 0.7)], 500);
    let s = CondSampler::fit(enc.view(), &t);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let first = (0..draws)
        .filter(|_| {
            let c = s.sample_cond_vector(&mut rng).unwrap();
            assert_eq!(c.vector.iter().filter(|&&v| v == 1.0).count(), 1);
            c.column == 0
        })
        .count();
    let rate = first as f64 / draws as f64;
    assert!((rate - 0.5).abs() < 0.02, "{rate}");
}

#[test]
fn toy_gan_matches_gaussian_marginal() {
    let (_, rows, gan) = toy_gan();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let synth = gan.sample(2000, None, &mut rng);
    let real: Vec<f64> = rows.iter().map(|r| r.values[0].as_f64().unwrap()).collect();
    let fake: Vec<f64> = synth.iter().map(|r| r.values[0].as_f64().unwrap()).collect();
    let ks = ks_complement(&real, &fake).unwrap();
    assert!(ks > 0.85, "KS complement {ks}");
}

#[test]
fn toy_gan_honours_condition() {
    let (_, _, gan) = toy_gan();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (cat, want) in [("1", true), ("0", false)] {
        let cond = gan.condition("flag", cat).unwrap();
        let synth = gan.sample(10_000, Some(&cond), &mut rng);
        let hit = synth.iter().filter(|r| r.values[1] == Cell::Bool(want)).count();
        assert!(hit as f64 / 10_000.0 > 0.95, "{cat}: {hit}");
    }
}

#[test]
fn training_is_deterministic() {
    let (schema, rows) = toy_table(120, 1);
    let cfg = GanConfig { epochs: 3, seed: 5, ..GanConfig::default() };
    let a = train_gan(&rows, &schema, &cfg).unwrap();
    let b = train_gan(&rows, &schema, &cfg).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.history, b.history);
    let c = train_gan(&rows, &schema, &GanConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.generator, c.generator);
}

#[test]
fn too_few_rows_rejected() {
    let (schema, rows) = toy_table(99, 1);
    assert!(train_gan(&rows, &schema, &GanConfig { epochs: 1, ..GanConfig::default() }).is_err());
}

/// Label rows with the given positive counts, spread so labels overlap
/// unevenly.
fn label_rows(n: usize, positives: [usize; 4], seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<bool>> = positives
        .iter()
        .map(|&p| {
            let mut c: Vec<bool> = (0..n).map(|i| i < p).collect();
            for i in (1..n).rev() {
                c.swap(i, rng.random_range(0..=i));
            }
            c
        })
        .collect();
    (0..n).map(|i| cols.iter_mut().map(|c| c[i]).collect()).collect()
}

#[test]
fn plan_targets_scarce_options() {
    // 86 %, 56 %, 5 % and 6 % positive out of 198
    let names: Vec<String> = (1..=4).map(|i| format!("label{i}")).collect();
    let labels = label_rows(198, [170, 111, 10, 12], 4);
    let plan = make_balance_plan(&labels, &names, 800);
    assert_eq!(plan.total(), 800);
    let scarce = plan.count_for("label3", true) + plan.count_for("label4", true) + plan.count_for("label1", false);
    assert!(scarce > 400, "{plan:?}");
    for e in &plan.entries {
        let other = plan.count_for(&e.label, !e.value);
        if ["label3", "label4"].contains(&e.label.as_str()) && e.value {
            assert!(e.count > other);
        }
    }
}

#[test]
fn rejection_contract_delivers_exact_counts() {
    let (schema, _, gan) = fixture_gan();
    let label = schema.label_names()[2].clone();
    let idx = schema.index_of(&label).unwrap();
    let plan = BalancePlan { entries: vec![PlanEntry { label: label.clone(), value: true, count: 500 }], ..BalancePlan::default() };
    let out = generate(gan, schema, &plan, 1).unwrap();
    assert_eq!(out.records.len(), 500);
    assert!(out.records.iter().all(|r| r.values[idx] == Cell::Bool(true)));
    assert_eq!(out.manifest.entries[0].delivered, 500);
    assert!(out.manifest.entries[0].attempts >= 500);
    assert!(out.manifest.warnings.is_empty());

    let empty = generate(gan, schema, &BalancePlan::default(), 1).unwrap();
    assert!(empty.records.is_empty());
    assert!(empty.manifest.entries.is_empty());

    let bad = BalancePlan { entries: vec![PlanEntry { label: "Region".into(), value: true, count: 1 }], ..BalancePlan::default() };
    assert!(generate(gan, schema, &bad, 1).is_err());
}

#[test]
fn equalising_plan_balances_fixture_labels() {
    let (schema, rows, gan) = fixture_gan();
    let names = schema.label_names();
    let idx: Vec<usize> = schema.label_indices();
    let labels: Vec<Vec<bool>> =
        rows.iter().map(|r| idx.iter().map(|&i| r.values[i].as_bool().unwrap()).collect()).collect();
    let budget = equalizing_budget(&labels, &names, 0.05, 100, 5000).unwrap();
    let plan = make_balance_plan(&labels, &names, budget);
    let out = generate(gan, schema, &plan, 2).unwrap();
    assert_eq!(out.records.len(), budget);
    let all: Vec<&BuildingRecord> = rows.iter().chain(&out.records).collect();
    for (k, &i) in idx.iter().enumerate() {
        let rate = all.iter().filter(|r| r.values[i] == Cell::Bool(true)).count() as f64 / all.len() as f64;
        assert!((0.4..=0.6).contains(&rate), "{}: {rate} plan {plan:?}", names[k]);
    }
}
