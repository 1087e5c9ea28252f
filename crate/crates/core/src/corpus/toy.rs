//! Small synthetic "real" tables for desk-scale experiments. Values follow
//! patterns that real data often shows and independent-marginal surrogates
//! break: rounded numbers and categories that depend on numeric columns.
//! The orders family has no per-value cue at all; only the agreement
//! between its billing and shipping columns separates real rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{mix_table, surrogate_synthesize, Cell, Domain, SurrogateMode, SyntheticSource, TableRecord, GENERATOR_COUNT};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyFamily {
    Census,
    Weather,
    /// Billing and shipping columns that agree on every real row.
    Orders,
}

impl ToyFamily {
    pub fn domain(self) -> Domain {
        match self {
            ToyFamily::Census => Domain::Social,
            ToyFamily::Weather => Domain::Science,
            ToyFamily::Orders => Domain::Finance,
        }
    }

    pub fn columns(self) -> Vec<String> {
        let cols: &[&str] = match self {
            ToyFamily::Census => &["age", "hours", "income", "job", "region"],
            ToyFamily::Weather => &["station", "temp", "humidity", "status", "wind", "pressure"],
            ToyFamily::Orders => &["bill_city", "bill_zone", "bill_tier", "ship_city", "ship_zone", "ship_tier"],
        };
        cols.iter().map(|s| s.to_string()).collect()
    }
}

fn pick<'a, R: Rng>(rng: &mut R, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

fn census_row<R: Rng>(rng: &mut R, variant: u8) -> Vec<Cell> {
    let (lo, hi, bonus) = if variant == 0 { (18, 80, 0.0) } else { (22, 70, 10_000.0) };
    let age: i64 = rng.random_range(lo..=hi);
    let hours: i64 = 5 * rng.random_range(4..=12);
    let noise = Normal::new(0.0, 3000.0).expect("valid").sample(rng);
    let income = (300.0 * age as f64 + 400.0 * hours as f64 + bonus + noise).max(500.0);
    let income = (income / 500.0).round() as i64 * 500;
    let jobs: &[&str] = if variant == 0 {
        &["clerk", "engineer", "nurse", "sales", "teacher"]
    } else {
        &["analyst", "driver", "nurse", "sales", "chef"]
    };
    let job = if age < 25 {
        "student"
    } else if age >= 65 {
        "retired"
    } else {
        pick(rng, jobs)
    };
    let region = pick(rng, &["north", "north", "south", "east", "west"]);
    vec![
        Cell::new(age.to_string()),
        Cell::new(hours.to_string()),
        Cell::new(income.to_string()),
        Cell::new(job),
        Cell::new(region),
    ]
}

fn weather_row<R: Rng>(rng: &mut R, variant: u8) -> Vec<Cell> {
    let (lo, hi) = if variant == 0 { (-10, 70) } else { (0, 80) };
    let temp = rng.random_range(lo..=hi) as f64 * 0.5;
    let humidity: i64 = 5 * rng.random_range(4..=20);
    let status = if temp < 8.0 {
        "cold"
    } else if temp > 24.0 {
        "hot"
    } else {
        "mild"
    };
    let stations: &[&str] = if variant == 0 {
        &["alpha", "bravo", "charlie"]
    } else {
        &["delta", "echo", "foxtrot", "golf"]
    };
    let wind: i64 = 2 * rng.random_range(0..=20);
    let pressure: i64 = 1000 + rng.random_range(0..=30);
    vec![
        Cell::new(pick(rng, stations)),
        Cell::new(format!("{temp:.1}")),
        Cell::new(humidity.to_string()),
        Cell::new(status),
        Cell::new(wind.to_string()),
        Cell::new(pressure.to_string()),
    ]
}

fn orders_row<R: Rng>(rng: &mut R, variant: u8) -> Vec<Cell> {
    let cities: &[&str] = if variant == 0 {
        &["oslo", "lima", "rome", "kiev"]
    } else {
        &["bonn", "riga", "doha", "baku"]
    };
    let bill = [
        pick(rng, cities),
        pick(rng, &["n1", "s2", "e3", "w4"]),
        pick(rng, &["gold", "blue", "gray", "pink"]),
    ];
    bill.iter().chain(&bill).map(|s| Cell::new(*s)).collect()
}

/// A table of `rows` real rows from `family`; `variant` (0 or 1) shifts the
/// value distributions while keeping the column names.
pub fn real_table(name: &str, family: ToyFamily, variant: u8, rows: usize, seed: u64) -> TableRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows)
        .map(|_| match family {
            ToyFamily::Census => census_row(&mut rng, variant),
            ToyFamily::Weather => weather_row(&mut rng, variant),
            ToyFamily::Orders => orders_row(&mut rng, variant),
        })
        .collect();
    TableRecord::from_real_rows(name, family.domain(), &family.columns(), data)
}

/// Mixes `real` with four independent-marginal surrogate sources.
pub fn mix_with_surrogates(real: &TableRecord, seed: u64) -> Result<TableRecord> {
    mix_with_surrogate_mode(real, SurrogateMode::IndependentMarginals, seed)
}

pub fn mix_with_surrogate_mode(real: &TableRecord, mode: SurrogateMode, seed: u64) -> Result<TableRecord> {
    let per_source = real.len().div_ceil(GENERATOR_COUNT);
    let sources = (0..GENERATOR_COUNT)
        .map(|g| {
            Ok(SyntheticSource {
                tag: format!("surrogate{g}"),
                rows: surrogate_synthesize(
                    real,
                    mode,
                    per_source,
                    seed.wrapping_mul(31).wrapping_add(g as u64 + 1),
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    mix_table(real, &sources, seed)
}

/// The four-table toy corpus: two census-like and two weather-like tables,
/// each mixed with surrogate rows.
pub fn toy_corpus(real_rows: usize, seed: u64) -> Result<Vec<TableRecord>> {
    toy_corpus_with(real_rows, SurrogateMode::IndependentMarginals, seed)
}

/// [`toy_corpus`] with the synthetic half drawn by `mode`.
pub fn toy_corpus_with(real_rows: usize, mode: SurrogateMode, seed: u64) -> Result<Vec<TableRecord>> {
    let specs = [
        ("census_a", ToyFamily::Census, 0u8),
        ("census_b", ToyFamily::Census, 1),
        ("weather_a", ToyFamily::Weather, 0),
        ("weather_b", ToyFamily::Weather, 1),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, (name, fam, var))| {
            let s = seed.wrapping_add(100 * i as u64);
            mix_with_surrogate_mode(&real_table(name, *fam, *var, real_rows, s), mode, s + 1)
        })
        .collect()
}
