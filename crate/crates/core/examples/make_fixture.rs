//! Regenerates `data/latvia_fixture_200.csv`.

use retrofit_core::fixture::{latvian_dataset, LATVIAN_FIXTURE_SEED};
use retrofit_core::ingest::write_dataset;
use retrofit_core::DatasetSchema;

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/data/latvia_fixture_200.csv".into());
    let file = std::fs::File::create(&out)?;
    write_dataset(file, &DatasetSchema::latvian(), &latvian_dataset(200, LATVIAN_FIXTURE_SEED))?;
    println!("wrote {out}");
    Ok(())
}
