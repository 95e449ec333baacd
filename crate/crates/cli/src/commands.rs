use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use retrofit_core::artifact::{HpoSummary, ModelArtifact, Provenance};
use retrofit_core::datagen::{equalizing_budget, generate, make_balance_plan, train_gan, GanConfig};
use retrofit_core::features::{label_matrix, EnergyClassTable, FeatureOptions, FeatureTransform};
use retrofit_core::hpo::{optimize_with, write_trial_log, SearchSpace, StudyOptions, TrialStatus, TuningData};
use retrofit_core::ingest::{
    drop_nulls, load_dataset, modeled_column_names, write_dataset, zscore_flags, SplitSpec, DEFAULT_ZSCORE_THRESHOLD,
};
use retrofit_core::measures::{MeasureMap, UK_MEASURE_MAP_JSON};
use retrofit_core::metrics::{binarize, evaluate_named, to_binary, MetricsReport, DEFAULT_THRESHOLD};
use retrofit_core::nn::MlpConfig;
use retrofit_core::pipeline::{
    augmented_sets, baseline_sets, evaluate_model, fit_model, label_rows, make_split, training_pool, TestIndexManifest,
    TrainingSets,
};
use retrofit_core::quality::{diagnostic_report, quality_report, QualityOptions};
use retrofit_core::service::{ExplainResponse, RecommendRequest, Recommender};
use retrofit_core::{BuildingRecord, DatasetSchema};
use serde::Serialize;

use crate::server::{self, AppState, ADDR_ENV, DEFAULT_ADDR};
use crate::svg::waterfall_svg;

#[derive(Debug, Parser)]
#[command(name = "retrofit", version, about = "Building retrofit recommendation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a raw CSV and fix the held-out test set.
    Ingest(IngestArgs),
    /// Train a model and write its artifact.
    Train(TrainArgs),
    /// Search MLP hyperparameters with TPE.
    Tune(TuneArgs),
    /// Train the tabular GAN on the training pool and sample rebalancing rows.
    Generate(GenerateArgs),
    /// Score synthetic rows against real ones.
    ReportQuality(QualityArgs),
    /// Print accuracy, precision, recall and F1 per label.
    Evaluate(EvaluateArgs),
    /// Shapley attributions for individual buildings.
    Explain(ExplainArgs),
    /// Run the HTTP recommendation service.
    Serve(ServeArgs),
    /// Check a measure-to-category map file.
    ValidateMap(ValidateMapArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SchemaArgs {
    /// Bundled schema name (`latvia`, `uk`) or a schema JSON file.
    #[arg(long, default_value = "latvia")]
    pub schema: String,
    /// Energy class table JSON enabling the energy-performance delta feature.
    #[arg(long)]
    pub class_table: Option<PathBuf>,
    /// Skip the energy-performance delta feature.
    #[arg(long, conflicts_with = "class_table")]
    pub no_energy_delta: bool,
}

impl SchemaArgs {
    pub fn schema(&self) -> Result<DatasetSchema> {
        Ok(match self.schema.as_str() {
            "latvia" => DatasetSchema::latvian(),
            "uk" => DatasetSchema::uk(),
            path => DatasetSchema::from_json_str(&read(Path::new(path))?)?,
        })
    }

    pub fn feature_options(&self, schema: &DatasetSchema) -> Result<FeatureOptions> {
        if self.no_energy_delta {
            return Ok(FeatureOptions::default());
        }
        if let Some(p) = &self.class_table {
            return Ok(FeatureOptions {
                energy_delta: true,
                class_table: Some(EnergyClassTable::from_json_str(&read(p)?)?),
            });
        }
        Ok(if schema.id == DatasetSchema::latvian().id {
            FeatureOptions::latvian()
        } else {
            FeatureOptions::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Directory receiving clean.csv, test_index.json and ingest_report.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Validation share of the rows left after the test cut.
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    /// Numerical columns to screen for z-score outliers (reported only).
    #[arg(long = "zscore-column")]
    pub zscore_columns: Vec<String>,
    /// Keep going when rows fail to parse; they are listed in the report.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Clean CSV written by `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    /// Test index file written by `ingest`.
    #[arg(long)]
    pub test_index: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MlpArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Study result from `tune`; its winning configuration replaces the
    /// flags above.
    #[arg(long)]
    pub tuned: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub mlp: MlpArgs,
    /// Synthetic rows merged into train and validation; the test set is
    /// left untouched.
    #[arg(long)]
    pub augment: Option<PathBuf>,
    /// Generation manifest of the `--augment` rows, recorded in the model.
    #[arg(long, requires = "augment")]
    pub generation_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the test metrics as JSON.
    #[arg(long)]
    pub metrics_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Search space JSON; the default space otherwise.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Study result JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// One JSON line per trial.
    #[arg(long)]
    pub trial_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Rows to generate.
    #[arg(long, conflicts_with = "equalize")]
    pub budget: Option<usize>,
    /// Pick the smallest budget whose plan brings every label near 50%.
    #[arg(long)]
    pub equalize: bool,
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// GAN configuration JSON; missing fields take their defaults.
    #[arg(long)]
    pub gan_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Leave label columns out of the scores.
    #[arg(long)]
    pub exclude_labels: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-column scores as CSV.
    #[arg(long)]
    pub columns_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model artifact; evaluated on the recorded test rows of `--data`.
    #[arg(long, requires_all = ["data", "test_index"], conflicts_with_all = ["predictions", "truth"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_index: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// CSV of predicted probabilities or 0/1 labels, one column per label.
    #[arg(long, requires = "truth")]
    pub predictions: Option<PathBuf>,
    /// CSV of true 0/1 labels with the same header as `--predictions`.
    #[arg(long, requires = "predictions")]
    pub truth: Option<PathBuf>,
    /// Decision threshold; the model's own threshold by default.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExplainFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset CSV holding the buildings to explain.
    #[arg(long, required_unless_present = "request", conflicts_with = "request")]
    pub data: Option<PathBuf>,
    /// Row numbers of `--data` (0-based); all rows when omitted.
    #[arg(long, value_delimiter = ',')]
    pub rows: Vec<usize>,
    /// A `/recommend` request body.
    #[arg(long)]
    pub request: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExplainFormat,
    /// Label index drawn by the SVG output.
    #[arg(long, default_value_t = 0)]
    pub label: usize,
    /// Output file; stdout when omitted. SVG output of several rows writes
    /// one file per row with the row number appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Artifact to serve. Without it every request answers 503 until a
    /// model is provided.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, env = ADDR_ENV, default_value = DEFAULT_ADDR)]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct ValidateMapArgs {
    /// Map JSON; the bundled UK map when omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Raw measure strings to classify with the map.
    pub measures: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv(path: &Path, schema: &DatasetSchema, records: &[BuildingRecord]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_dataset(BufWriter::new(f), schema, records)?;
    Ok(())
}

fn load_strict(path: &Path, schema: &DatasetSchema) -> Result<Vec<BuildingRecord>> {
    let report = load_dataset(path, schema)?;
    for w in &report.warnings {
        log::warn!("{}: {w}", path.display());
    }
    report.into_strict().with_context(|| format!("loading {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<TestIndexManifest> {
    let m: TestIndexManifest =
        serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    m.verify()?;
    Ok(m)
}

/// Records plus the split recorded by the test index file.
fn load_split(args: &SplitArgs, schema: &DatasetSchema) -> Result<(Vec<BuildingRecord>, TrainingSets, TestIndexManifest)> {
    let records = load_strict(&args.data, schema)?;
    let manifest = load_manifest(&args.test_index)?;
    let (idx, _) = make_split(records.len(), manifest.split)?;
    let sets = baseline_sets(&records, &idx, &manifest)?;
    Ok((records, sets, manifest))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune(a),
        Command::Generate(a) => generate_rows(a),
        Command::ReportQuality(a) => report_quality(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Serve(a) => serve(a),
        Command::ValidateMap(a) => validate_map(a),
    }
}

#[derive(Serialize)]
struct IngestReport {
    input_rows: usize,
    rejected: Vec<retrofit_core::ingest::RowRejection>,
    dropped: retrofit_core::ingest::DropReport,
    outliers: std::collections::BTreeMap<String, Vec<usize>>,
    train: usize,
    val: usize,
    test: usize,
    test_index_digest: String,
}

fn ingest(a: IngestArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let report = load_dataset(&a.data, &schema)?;
    if !report.rejected.is_empty() && !a.lenient {
        bail!(
            "{} row(s) failed to parse, first at row {} ({}: {}); rerun with --lenient to drop them",
            report.rejected.len(),
            report.rejected[0].row,
            report.rejected[0].column,
            report.rejected[0].reason
        );
    }
    let input_rows = report.records.len() + report.rejected.len();
    let (clean, dropped) = drop_nulls(&report.records, &schema, &modeled_column_names(&schema))?;
    let mut outliers = std::collections::BTreeMap::new();
    for c in &a.zscore_columns {
        outliers.insert(c.clone(), zscore_flags(&clean, &schema, c, DEFAULT_ZSCORE_THRESHOLD)?);
    }
    let spec = SplitSpec {
        seed: a.seed,
        test_fraction: a.test_fraction,
        val_fraction_of_rest: a.val_fraction,
    };
    let (idx, manifest) = make_split(clean.len(), spec)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_csv(&a.out_dir.join("clean.csv"), &schema, &clean)?;
    write_json(&a.out_dir.join("test_index.json"), &manifest)?;
    let summary = IngestReport {
        input_rows,
        rejected: report.rejected,
        dropped,
        outliers,
        train: idx.train.len(),
        val: idx.val.len(),
        test: idx.test.len(),
        test_index_digest: manifest.digest.clone(),
    };
    write_json(&a.out_dir.join("ingest_report.json"), &summary)?;
    println!(
        "{} rows kept of {}; train {} / val {} / test {}; test index {}",
        clean.len(),
        summary.input_rows,
        summary.train,
        summary.val,
        summary.test,
        manifest.digest
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct TunedFile {
    best_trial: usize,
    best_value: f64,
    best_config: MlpConfig,
    #[serde(default)]
    trials: Vec<retrofit_core::hpo::Trial>,
}

fn mlp_config(a: &MlpArgs) -> Result<(MlpConfig, Option<HpoSummary>)> {
    if let Some(p) = &a.tuned {
        let t: TunedFile = serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
        let summary = HpoSummary {
            best_trial: t.best_trial,
            best_value: t.best_value,
            n_trials: t.trials.len(),
            n_pruned: t.trials.iter().filter(|x| x.status == TrialStatus::Pruned).count(),
        };
        return Ok((t.best_config, Some(summary)));
    }
    let mut c = MlpConfig::new(a.hidden.clone(), a.learning_rate, a.batch_size, a.seed);
    if let Some(e) = a.max_epochs {
        c.max_epochs = e;
    }
    if let Some(p) = a.patience {
        c.patience = p;
    }
    c.validate()?;
    Ok((c, None))
}

fn train(a: TrainArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let options = a.schema.feature_options(&schema)?;
    let (config, hpo) = mlp_config(&a.mlp)?;
    let (records, baseline, manifest) = load_split(&a.split, &schema)?;
    let mut provenance = Provenance {
        test_index_digest: Some(manifest.digest.clone()),
        ..Default::default()
    };
    let sets = match &a.augment {
        Some(p) => {
            let synthetic = load_strict(p, &schema)?;
            let (idx, _) = make_split(records.len(), manifest.split)?;
            let sets = augmented_sets(&records, &idx, &manifest, &synthetic, config.seed)?;
            if let Some(m) = &a.generation_manifest {
                let gm: retrofit_core::datagen::GenerationManifest = serde_json::from_str(&read(m)?)?;
                provenance.generation_manifest_digest = Some(gm.digest());
            }
            provenance.note = format!("augmented with {} synthetic rows from {}", synthetic.len(), p.display());
            sets
        }
        None => {
            provenance.note = "real rows only".into();
            baseline
        }
    };
    provenance.real_rows = sets.real_rows;
    provenance.synthetic_rows = sets.synthetic_rows;

    let fitted = fit_model(&sets.train, &sets.val, &schema, &options, &config)?;
    log::info!(
        "best epoch {} of {}, validation loss {:.5}",
        fitted.report.best_epoch,
        fitted.report.stopped_epoch,
        fitted.report.best_val_loss
    );
    let report = evaluate_model(&fitted.transform, &fitted.model, &sets.test, &schema, a.threshold)?;
    let mut artifact = fitted.into_artifact(&schema, &config, provenance)?;
    artifact.threshold = a.threshold;
    artifact.hpo = hpo;
    artifact.save(&a.out)?;
    println!("{}", report.to_table());
    println!("model {} written to {}", artifact.id(), a.out.display());
    if let Some(p) = &a.metrics_json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn encode_sets(
    sets: &TrainingSets,
    schema: &DatasetSchema,
    options: &FeatureOptions,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let transform = FeatureTransform::fit(&sets.train, schema, options)?;
    let (tx, _) = transform.apply(&sets.train, schema)?;
    let (vx, _) = transform.apply(&sets.val, schema)?;
    Ok((tx, label_matrix(&sets.train, schema)?, vx, label_matrix(&sets.val, schema)?))
}

fn tune(a: TuneArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let options = a.schema.feature_options(&schema)?;
    let (_, sets, _) = load_split(&a.split, &schema)?;
    let (tx, ty, vx, vy) = encode_sets(&sets, &schema, &options)?;
    let space: SearchSpace = match &a.space {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => SearchSpace::default(),
    };
    let mut study = StudyOptions::new(a.trials, a.seed);
    if let Some(e) = a.max_epochs {
        study.max_epochs = e;
    }
    let data = TuningData {
        train_x: tx.view(),
        train_y: ty.view(),
        val_x: vx.view(),
        val_y: vy.view(),
    };
    let result = optimize_with(data, &space, &study, |t| {
        let outcome = t.value.map_or("pruned".to_string(), |v| format!("{v:.5}"));
        eprintln!("trial {:>3}: {:?} lr={} batch={} -> {outcome}", t.id, t.params.layer_sizes, t.params.learning_rate, t.params.batch_size);
    })?;
    write_json(&a.out, &result)?;
    if let Some(p) = &a.trial_log {
        write_trial_log(BufWriter::new(File::create(p)?), &result.trials)?;
    }
    println!(
        "best trial {}: {:?} lr={} batch={} validation loss {:.6}",
        result.best_trial,
        result.best_config.hidden_layers,
        result.best_config.learning_rate,
        result.best_config.batch_size,
        result.best_value
    );
    Ok(())
}

fn generate_rows(a: GenerateArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let records = load_strict(&a.split.data, &schema)?;
    let manifest = load_manifest(&a.split.test_index)?;
    let (idx, _) = make_split(records.len(), manifest.split)?;
    manifest.check(records.len(), &idx)?;
    // the GAN never sees the test rows
    let pool = training_pool(&records, &idx);

    let mut config: GanConfig = match &a.gan_config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => GanConfig::default(),
    };
    config.seed = a.seed;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let labels = label_rows(&pool, &schema);
    let names = schema.label_names();
    let budget = match (a.budget, a.equalize) {
        (Some(b), _) => b,
        (None, true) => equalizing_budget(&labels, &names, a.tolerance, 100, 20 * pool.len().max(100))
            .context("no budget brings every label within the tolerance of 50%")?,
        (None, false) => bail!("give --budget or --equalize"),
    };
    let plan = make_balance_plan(&labels, &names, budget);
    eprintln!("training GAN on {} rows for {} epochs", pool.len(), config.epochs);
    let gan = train_gan(&pool, &schema, &config)?;
    let out = generate(&gan, &schema, &plan, a.seed)?;
    for w in &out.manifest.warnings {
        log::warn!("{w}");
    }
    write_csv(&a.out, &schema, &out.records)?;
    write_json(&a.manifest, &out.manifest)?;
    println!(
        "{} of {} planned rows written to {} (manifest {})",
        out.records.len(),
        plan.total(),
        a.out.display(),
        out.manifest.digest()
    );
    Ok(())
}

fn report_quality(a: QualityArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let real = load_strict(&a.real, &schema)?;
    let synth = load_strict(&a.synthetic, &schema)?;
    let report = quality_report(
        &real,
        &synth,
        &schema,
        QualityOptions {
            exclude_labels: a.exclude_labels,
        },
    )?;
    let diagnostic = diagnostic_report(&real, &synth, &schema);
    println!("Column shapes      {:.4}", report.column_shapes);
    println!("Column pair trends {:.4}", report.pair_trends);
    println!("Overall quality    {:.4}", report.overall);
    println!("Diagnostic score   {:.4}", diagnostic.score);
    if let Some(p) = &a.out {
        write_json(p, &serde_json::json!({ "quality": report, "diagnostic": diagnostic }))?;
    }
    if let Some(p) = &a.columns_csv {
        std::fs::write(p, report.column_scores_csv()?)?;
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut data = Vec::new();
    let mut n = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{} row {row}: {field:?} is not a number", path.display()))?;
            data.push(v);
        }
        n += 1;
    }
    Ok((header.clone(), Array2::from_shape_vec((n, header.len()), data)?))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let report: MetricsReport = match (&a.model, &a.predictions, &a.truth) {
        (Some(model), None, None) => {
            let artifact = ModelArtifact::load(model)?;
            let schema = artifact.schema.clone();
            let split = SplitArgs {
                data: a.data.clone().expect("clap requires --data"),
                test_index: a.test_index.clone().expect("clap requires --test-index"),
            };
            let (_, sets, _) = load_split(&split, &schema)?;
            let t = a.threshold.unwrap_or(artifact.threshold);
            evaluate_model(&artifact.transform, &artifact.model, &sets.test, &schema, t)?
        }
        (None, Some(p), Some(t)) => {
            let (names, probs) = read_matrix(p)?;
            let (truth_names, truth) = read_matrix(t)?;
            if names != truth_names {
                bail!("prediction header {names:?} differs from truth header {truth_names:?}");
            }
            let pred = binarize(probs.view(), a.threshold.unwrap_or(DEFAULT_THRESHOLD))?;
            evaluate_named(pred.view(), to_binary(truth.view())?.view(), &names)?
        }
        _ => bail!("give either --model with --data and --test-index, or --predictions with --truth"),
    };
    println!("{}", report.to_table());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn explanation_rows(e: &ExplainResponse, row: usize, out: &mut csv::Writer<impl Write>) -> Result<()> {
    for l in &e.labels {
        for f in &l.attributions {
            out.write_record([
                row.to_string(),
                l.category.key.clone(),
                f.feature.clone(),
                f.value.to_string(),
                f.phi.to_string(),
                l.base_value.to_string(),
                l.fx.to_string(),
            ])?;
        }
    }
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&a.model)?;
    let schema = artifact.schema.clone();
    let rec = Recommender::new(artifact);
    let mut results: Vec<(usize, ExplainResponse)> = Vec::new();
    if let Some(p) = &a.request {
        let req: RecommendRequest = serde_json::from_str(&read(p)?)?;
        results.push((0, rec.explain(&req)?));
    } else {
        let data = a.data.as_ref().expect("clap requires --data or --request");
        let records = load_strict(data, &schema)?;
        let rows: Vec<usize> = if a.rows.is_empty() { (0..records.len()).collect() } else { a.rows.clone() };
        for r in rows {
            let record = records.get(r).with_context(|| format!("row {r} is out of range ({} rows)", records.len()))?;
            results.push((r, rec.explain_record(record)?));
        }
    }

    match a.format {
        ExplainFormat::Json => {
            let body: Vec<_> = results
                .iter()
                .map(|(row, e)| serde_json::json!({ "row": row, "explanation": e }))
                .collect();
            let text = serde_json::to_string_pretty(&body)?;
            match &a.out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        ExplainFormat::Csv => {
            let sink: Box<dyn Write> = match &a.out {
                Some(p) => Box::new(File::create(p)?),
                None => Box::new(std::io::stdout()),
            };
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["row", "category", "feature", "value", "phi", "base_value", "fx"])?;
            for (row, e) in &results {
                explanation_rows(e, *row, &mut w)?;
            }
            w.flush()?;
        }
        ExplainFormat::Svg => {
            let many = results.len() > 1;
            for (row, e) in &results {
                let l = e
                    .labels
                    .get(a.label)
                    .with_context(|| format!("label {} out of range", a.label))?;
                let svg = waterfall_svg(&l.waterfall, &format!("{} (row {row})", l.category.title));
                match &a.out {
                    Some(p) if many => {
                        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("waterfall");
                        std::fs::write(p.with_file_name(format!("{stem}_{row}.svg")), svg)?;
                    }
                    Some(p) => std::fs::write(p, svg)?,
                    None => println!("{svg}"),
                }
            }
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = match &a.model {
        Some(p) => AppState::from_path(p.clone()).with_context(|| format!("loading {}", p.display()))?,
        None => {
            log::warn!("no model given; answering 503 until one is loaded");
            AppState::empty()
        }
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(state, &a.addr))
}

fn validate_map(a: ValidateMapArgs) -> Result<()> {
    let text = match &a.map {
        Some(p) => read(p)?,
        None => UK_MEASURE_MAP_JSON.to_string(),
    };
    let map = MeasureMap::from_json_str(&text)?;
    let total: usize = map.categories.values().map(Vec::len).sum();
    println!("map valid: {total} measures in {} categories", map.categories.len());
    for m in &a.measures {
        match map.classify(m) {
            Some(c) => println!("{m:?} -> {}", c.key()),
            None => println!("{m:?} -> unmatched"),
        }
    }
    Ok(())
}
