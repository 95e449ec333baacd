use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use super::balance::{BalancePlan, PlanEntry};
use super::gan::{GanConfig, TrainedGan};
use super::DatagenError;
use crate::schema::{BuildingRecord, Cell, ColumnRole, DatasetSchema};

/// Generator draws allowed per requested row before giving up.
pub const RETRY_FACTOR: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryStats {
    pub label: String,
    pub value: bool,
    pub requested: usize,
    pub delivered: usize,
    /// Rows drawn from the generator, accepted or not.
    pub attempts: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub seed: u64,
    pub plan: BalancePlan,
    pub config: GanConfig,
    pub entries: Vec<EntryStats>,
    pub warnings: Vec<String>,
}

impl GenerationManifest {
    pub fn delivered(&self) -> usize {
        self.entries.iter().map(|e| e.delivered).sum()
    }

    /// SHA-256 of the manifest's compact JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("manifest serialises");
        hex::encode(sha2::Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub records: Vec<BuildingRecord>,
    pub manifest: GenerationManifest,
}

fn run_entry(
    gan: &TrainedGan,
    label_index: usize,
    entry: &PlanEntry,
    seed: u64,
    stream: u64,
) -> Result<(Vec<BuildingRecord>, EntryStats), DatagenError> {
    let cond = gan.condition(&entry.label, if entry.value { "1" } else { "0" })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let budget = entry.count.saturating_mul(RETRY_FACTOR);
    let mut rows = Vec::with_capacity(entry.count);
    let mut attempts = 0;
    while rows.len() < entry.count && attempts < budget {
        let want = (entry.count - rows.len()).min(budget - attempts);
        for r in gan.sample(want, Some(&cond), &mut rng) {
            attempts += 1;
            if r.values[label_index] == Cell::Bool(entry.value) {
                rows.push(r);
                if rows.len() == entry.count {
                    break;
                }
            }
        }
    }
    let stats = EntryStats {
        label: entry.label.clone(),
        value: entry.value,
        requested: entry.count,
        delivered: rows.len(),
        attempts,
        exhausted: rows.len() < entry.count,
    };
    Ok((rows, stats))
}

/// Samples every plan entry under its condition and keeps only rows whose
/// decoded label matches, so delivered rows satisfy their condition exactly.
/// An entry that runs out of retries contributes what it has and a warning.
pub fn generate(
    gan: &TrainedGan,
    schema: &DatasetSchema,
    plan: &BalancePlan,
    seed: u64,
) -> Result<GenerationOutput, DatagenError> {
    let mut indices = Vec::with_capacity(plan.entries.len());
    for e in &plan.entries {
        match schema.index_of(&e.label) {
            Some(i) if schema.columns[i].role == ColumnRole::Label => indices.push(i),
            _ => return Err(DatagenError::NotLabel(e.label.clone())),
        }
    }
    let results: Vec<Result<_, DatagenError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .entries
            .iter()
            .zip(&indices)
            .enumerate()
            .map(|(k, (entry, &idx))| scope.spawn(move || run_entry(gan, idx, entry, seed, k as u64 + 1)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation worker panicked"))
            .collect()
    });

    let mut records = Vec::new();
    let mut entries = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for r in results {
        let (rows, stats) = r?;
        if stats.exhausted {
            let w = format!(
                "{}={}: retry budget exhausted after {} draws, delivered {} of {}",
                stats.label, stats.value as u8, stats.attempts, stats.delivered, stats.requested
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        records.extend(rows);
        entries.push(stats);
    }
    Ok(GenerationOutput {
        records,
        manifest: GenerationManifest {
            seed,
            plan: plan.clone(),
            config: gan.config.clone(),
            entries,
            warnings,
        },
    })
}
