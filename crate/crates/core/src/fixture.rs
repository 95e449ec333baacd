//! Deterministic Latvian-shaped building data for tests, demos and the
//! bundled fixture CSV.
//!
//! Rows follow [`DatasetSchema::latvian`]. Label rates mimic a small,
//! heavily imbalanced retrofit programme: building fabric ≈ 86 %, controls
//! ≈ 56 %, and exactly 5 % positives for each of DHW and heating system.
//! Every label depends on the features so that a classifier has signal to
//! learn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::schema::{BuildingRecord, Cell, DatasetSchema};

const REGIONS: [&str; 5] = ["Riga", "Vidzeme", "Kurzeme", "Zemgale", "Latgale"];

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

struct Raw {
    region: usize,
    town: usize,
    county: usize,
    year: f64,
    total_area: f64,
    volume: f64,
    floor_height: f64,
    ref_area: f64,
    floors: f64,
    underground: bool,
    mansard: bool,
    roof_floor: bool,
    initial: &'static str,
    consumption: f64,
    after: &'static str,
    labels: [bool; 4],
}

/// `n` records in schema order; identical for identical `(n, seed)`.
pub fn latvian_dataset(n: usize, seed: u64) -> Vec<BuildingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let year_dist = Normal::<f64>::new(1968.0, 16.0).expect("valid normal");
    let noise = Normal::<f64>::new(0.0, 0.6).expect("valid normal");

    let mut rows: Vec<Raw> = (0..n)
        .map(|_| {
            let region = rng.random_range(0..REGIONS.len());
            let town = rng.random_range(0..40);
            let county = (town / 2).min(19);
            let year = year_dist.sample(&mut rng).clamp(1885.0, 1995.0).round();
            let floors = f64::from(rng.random_range(1u8..=9));
            let floor_height = round_to(
                if year < 1940.0 {
                    rng.random_range(2.9..3.4)
                } else {
                    rng.random_range(2.5..2.9)
                },
                2,
            );
            let footprint = rng.random_range(120.0..650.0);
            let ref_area = round_to(floors * footprint * 0.85, 1);
            let total_area = round_to(ref_area / 0.85, 1);
            let volume = round_to(ref_area * floor_height, 1);
            let underground = rng.random_bool(0.6);
            let mansard = rng.random_bool(0.15);
            let roof_floor = rng.random_bool(0.3);
            let u: f64 = rng.random();
            let initial = if u < 0.25 {
                "D"
            } else if u < 0.85 {
                "E"
            } else {
                "F"
            };
            let consumption = round_to(
                match initial {
                    "D" => rng.random_range(105.0..150.0),
                    "E" => rng.random_range(130.0..180.0),
                    _ => rng.random_range(165.0..260.0),
                },
                1,
            );
            let v: f64 = rng.random();
            let after = if v < 0.7 {
                "C"
            } else if v < 0.85 {
                "B"
            } else {
                "D"
            };
            Raw {
                region,
                town,
                county,
                year,
                total_area,
                volume,
                floor_height,
                ref_area,
                floors,
                underground,
                mansard,
                roof_floor,
                initial,
                consumption,
                after,
                labels: [false; 4],
            }
        })
        .collect();

    for r in rows.iter_mut() {
        let fabric = 2.0 + 0.35 * (r.floors - 4.0) + if r.after == "B" { 0.9 } else { 0.0 }
            - if r.after == "D" { 1.8 } else { 0.0 }
            + noise.sample(&mut rng);
        r.labels[0] = rng.random_bool(sigmoid(fabric));
        let controls = 0.3 - if r.underground { 0.9 } else { 0.0 } + (1975.0 - r.year) / 25.0
            + if r.roof_floor { 0.7 } else { 0.0 }
            + noise.sample(&mut rng);
        r.labels[1] = rng.random_bool(sigmoid(controls));
    }

    let k = (0.05 * n as f64).round() as usize;
    let dhw: Vec<f64> = rows
        .iter()
        .map(|r| {
            2.0 * f64::from(u8::from(r.underground && r.year < 1960.0))
                + (r.consumption - 150.0) / 30.0
                + 0.8 * f64::from(u8::from(r.floors <= 3.0))
                + noise.sample(&mut rng)
        })
        .collect();
    let heat: Vec<f64> = rows
        .iter()
        .map(|r| {
            2.0 * f64::from(u8::from(r.initial == "F"))
                + 1.2 * f64::from(u8::from(r.mansard))
                + (r.year - 1960.0).abs() / -40.0
                + noise.sample(&mut rng)
        })
        .collect();
    for (label, scores) in [(2usize, dhw), (3usize, heat)] {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        for &i in order.iter().take(k) {
            rows[i].labels[label] = true;
        }
    }

    rows.into_iter()
        .map(|r| {
            let mut values = vec![
                Cell::Category(REGIONS[r.region].to_string()),
                Cell::Category(format!("Town {:02}", r.town)),
                Cell::Category(format!("County {:02}", r.county)),
                Cell::Number(r.year),
                Cell::Number(r.total_area),
                Cell::Number(r.volume),
                Cell::Number(r.floor_height),
                Cell::Number(r.ref_area),
                Cell::Number(r.floors),
                Cell::Bool(r.underground),
                Cell::Bool(r.mansard),
                Cell::Bool(r.roof_floor),
                Cell::Category(r.initial.to_string()),
                Cell::Number(r.consumption),
                Cell::Category(r.after.to_string()),
            ];
            values.extend(r.labels.iter().map(|&b| Cell::Bool(b)));
            BuildingRecord::new(values)
        })
        .collect()
}

/// Bundled 200-row fixture as CSV text (generated with seed 2024).
pub const LATVIAN_FIXTURE_CSV: &str = include_str!("../data/latvia_fixture_200.csv");

/// Seed used to generate [`LATVIAN_FIXTURE_CSV`].
pub const LATVIAN_FIXTURE_SEED: u64 = 2024;

/// Parses the bundled fixture.
pub fn latvian_fixture() -> Vec<BuildingRecord> {
    let schema = DatasetSchema::latvian();
    crate::ingest::load_dataset_from_reader(LATVIAN_FIXTURE_CSV.as_bytes(), &schema)
        .and_then(|r| r.into_strict())
        .expect("bundled fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minority_labels_at_five_percent() {
        let rows = latvian_dataset(200, 1);
        let schema = DatasetSchema::latvian();
        let rates: Vec<usize> = (0..4)
            .map(|k| {
                rows.iter()
                    .filter(|r| r.labels(&schema).unwrap().to_array()[k])
                    .count()
            })
            .collect();
        assert_eq!(rates[2], 10);
        assert_eq!(rates[3], 10);
        assert!(rates[0] > 140, "{rates:?}");
        assert!(rates[1] > 70 && rates[1] < 150, "{rates:?}");
    }

    #[test]
    fn bundled_csv_matches_generator() {
        let schema = DatasetSchema::latvian();
        let mut buf = Vec::new();
        crate::ingest::write_dataset(
            &mut buf,
            &schema,
            &latvian_dataset(200, LATVIAN_FIXTURE_SEED),
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), LATVIAN_FIXTURE_CSV);
        assert_eq!(latvian_fixture().len(), 200);
    }
}
