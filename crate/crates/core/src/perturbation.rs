//! Noisy replacement of a fraction of a table's synthetic rows.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{format_decimal, Cell, ColumnKind, ColumnSchema, Label, TableRecord};
use crate::error::{Error, Result};

/// Replacement string of the placeholder noise.
pub const PLACEHOLDER: &str = "???";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// Fraction of synthetic rows replaced.
    pub row_fraction: f64,
    /// Chance that each cell of a replaced row is perturbed.
    pub cell_probability: f64,
    /// Weights of placeholder, scramble and anagram noise.
    pub categorical_noise_weights: [f64; 3],
    pub scramble_length_range: (usize, usize),
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            row_fraction: 0.2,
            cell_probability: 0.5,
            categorical_noise_weights: [1.0 / 3.0; 3],
            scramble_length_range: (3, 10),
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.row_fraction) {
            return Err(Error::protocol(format!("row_fraction {} outside [0, 1]", self.row_fraction)));
        }
        if !(self.cell_probability > 0.0 && self.cell_probability <= 1.0) {
            return Err(Error::protocol(format!(
                "cell_probability {} outside (0, 1]",
                self.cell_probability
            )));
        }
        let w = &self.categorical_noise_weights;
        if w.iter().any(|x| x.is_nan() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::protocol(format!("noise weights {w:?} are not on the simplex")));
        }
        let (lo, hi) = self.scramble_length_range;
        if lo == 0 || lo > hi {
            return Err(Error::protocol(format!("bad scramble length range ({lo}, {hi})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalNoise {
    Placeholder,
    Scramble,
    Anagram,
}

const NOISE_MODES: [CategoricalNoise; 3] = [
    CategoricalNoise::Placeholder,
    CategoricalNoise::Scramble,
    CategoricalNoise::Anagram,
];

/// Applies one noise mode. Columns without categories or characters are
/// returned unchanged.
pub fn categorical_noise<R: Rng + ?Sized>(
    value: &str,
    column: &ColumnSchema,
    mode: CategoricalNoise,
    config: &PerturbationConfig,
    rng: &mut R,
) -> String {
    match mode {
        CategoricalNoise::Placeholder => PLACEHOLDER.to_string(),
        CategoricalNoise::Scramble => {
            let chars: Vec<char> = column.char_vocabulary.iter().copied().collect();
            if chars.is_empty() {
                return value.to_string();
            }
            let (lo, hi) = config.scramble_length_range;
            let len = rng.random_range(lo..=hi);
            (0..len).map(|_| *chars.choose(rng).expect("nonempty")).collect()
        }
        CategoricalNoise::Anagram => {
            let categories: Vec<&String> = column.category_set.iter().collect();
            let Some(source) = categories.choose(rng) else {
                return value.to_string();
            };
            let mut chars: Vec<char> = source.chars().collect();
            chars.shuffle(rng);
            chars.into_iter().collect()
        }
    }
}

pub fn perturb_categorical<R: Rng + ?Sized>(
    value: &str,
    column: &ColumnSchema,
    config: &PerturbationConfig,
    rng: &mut R,
) -> String {
    let weights = WeightedIndex::new(config.categorical_noise_weights).expect("validated weights");
    let mode = NOISE_MODES[weights.sample(rng)];
    categorical_noise(value, column, mode, config, rng)
}

/// Uniform draw in the column's observed range, rendered with its modal
/// precision (more digits only when rounding would leave the range).
/// Columns without observed values keep `value`.
pub fn perturb_numeric<R: Rng + ?Sized>(value: &Cell, column: &ColumnSchema, rng: &mut R) -> Cell {
    let (Some(min), Some(max)) = (column.observed_min, column.observed_max) else {
        return value.clone();
    };
    if min >= max {
        return Cell::new(format_decimal(min, column.decimals));
    }
    let draw = rng.random_range(min..=max);
    for decimals in column.decimals..=column.decimals + 15 {
        let text = format_decimal(draw, decimals);
        let cell = Cell::new(text);
        if cell.number.is_some_and(|v| (min..=max).contains(&v)) {
            return cell;
        }
    }
    Cell::new(format!("{draw}"))
}

/// Result of [`apply_protocol`].
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub table: TableRecord,
    /// Indices of the replaced synthetic rows, ascending.
    pub replaced: Vec<usize>,
}

/// Column statistics over the synthetic rows only.
fn synthetic_schema(table: &TableRecord) -> Vec<ColumnSchema> {
    let synthetic: Vec<&Vec<Cell>> = table
        .rows
        .iter()
        .zip(&table.labels)
        .filter(|(_, l)| l.is_synthetic())
        .map(|(r, _)| r)
        .collect();
    table
        .schema
        .iter()
        .enumerate()
        .map(|(i, c)| ColumnSchema::with_kind(&c.name, c.canonical_index, c.kind, synthetic.iter().map(|r| &r[i])))
        .collect()
}

/// Replaces `round(row_fraction * #synthetic)` synthetic rows by noisy
/// versions of themselves. Real rows and all labels are untouched.
pub fn apply_protocol(table: &TableRecord, config: &PerturbationConfig) -> Result<Perturbed> {
    config.validate()?;
    table.validate()?;
    let synthetic: Vec<usize> = (0..table.len())
        .filter(|&i| table.labels[i] == Label::Synthetic)
        .collect();
    let count = (config.row_fraction * synthetic.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut replaced: Vec<usize> = index::sample(&mut rng, synthetic.len(), count)
        .into_iter()
        .map(|k| synthetic[k])
        .collect();
    replaced.sort_unstable();
    let stats = synthetic_schema(table);
    let mut out = table.clone();
    for &r in &replaced {
        for (c, column) in stats.iter().enumerate() {
            if !rng.random_bool(config.cell_probability) {
                continue;
            }
            let cell = &out.rows[r][c];
            out.rows[r][c] = match column.kind {
                ColumnKind::Categorical => Cell::new(perturb_categorical(&cell.text, column, config, &mut rng)),
                ColumnKind::Numeric => perturb_numeric(cell, column, &mut rng),
            };
        }
    }
    if !replaced.is_empty() {
        out.refresh_schema();
    }
    Ok(Perturbed { table: out, replaced })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::toy;

    fn fruit() -> ColumnSchema {
        let cells = [Cell::new("apple"), Cell::new("orange")];
        ColumnSchema::infer("fruit", 0, cells.iter())
    }

    #[test]
    fn placeholder() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PerturbationConfig::default();
        assert_eq!(categorical_noise("apple", &fruit(), CategoricalNoise::Placeholder, &cfg, &mut rng), "???");
    }

    #[test]
    fn anagram_is_a_category_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = PerturbationConfig::default();
        let col = fruit();
        let sorted = |s: &str| {
            let mut v: Vec<char> = s.chars().collect();
            v.sort();
            v
        };
        let mut seen_orange = false;
        for _ in 0..50 {
            let out = categorical_noise("orange", &col, CategoricalNoise::Anagram, &cfg, &mut rng);
            let matches_orange = sorted(&out) == sorted("orange");
            assert!(matches_orange || sorted(&out) == sorted("apple"));
            seen_orange |= matches_orange && out.len() == 6;
        }
        assert!(seen_orange);
    }

    #[test]
    fn scramble_uses_column_characters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = PerturbationConfig::default();
        let col = fruit();
        for _ in 0..200 {
            let out = categorical_noise("apple", &col, CategoricalNoise::Scramble, &cfg, &mut rng);
            let n = out.chars().count();
            assert!((3..=10).contains(&n));
            assert!(out.chars().all(|c| col.char_vocabulary.contains(&c)));
        }
    }

    #[test]
    fn numeric_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cells: Vec<Cell> = ["0", "10", "3"].into_iter().map(Cell::new).collect();
        let col = ColumnSchema::infer("x", 0, cells.iter());
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let v = perturb_numeric(&cells[2], &col, &mut rng).number.unwrap();
            assert!((0.0..=10.0).contains(&v));
            sum += v;
        }
        let mean = sum / 10_000.0;
        assert!((4.8..=5.2).contains(&mean), "{mean}");

        let constant: Vec<Cell> = ["5", "5"].into_iter().map(Cell::new).collect();
        let col = ColumnSchema::infer("y", 0, constant.iter());
        assert_eq!(perturb_numeric(&constant[0], &col, &mut rng).number, Some(5.0));
    }

    #[test]
    fn rounding_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cells: Vec<Cell> = ["0.96", "0.91", "0.9", "0.9", "0.9"].into_iter().map(Cell::new).collect();
        let col = ColumnSchema::infer("x", 0, cells.iter());
        assert_eq!(col.decimals, 1);
        for _ in 0..2000 {
            let v = perturb_numeric(&cells[0], &col, &mut rng).number.unwrap();
            assert!((0.9..=0.96).contains(&v), "{v}");
        }
    }

    #[test]
    fn protocol_counts() {
        let real = toy::real_table("c", toy::ToyFamily::Census, 0, 1000, 1);
        let mixed = toy::mix_with_surrogates(&real, 2).unwrap();
        let before = mixed.count(Label::Synthetic);
        assert_eq!(before, 1000);
        let cfg = PerturbationConfig { seed: 3, ..Default::default() };
        let out = apply_protocol(&mixed, &cfg).unwrap();
        assert_eq!(out.replaced.len(), 200);
        assert_eq!(out.table.len(), mixed.len());
        assert_eq!(out.table.labels, mixed.labels);
        for i in 0..mixed.len() {
            if mixed.labels[i] == Label::Real || !out.replaced.contains(&i) {
                assert_eq!(out.table.rows[i], mixed.rows[i]);
            }
        }
        let zero = apply_protocol(&mixed, &PerturbationConfig { row_fraction: 0.0, ..cfg.clone() }).unwrap();
        assert_eq!(zero.table, mixed);
        let again = apply_protocol(&mixed, &cfg).unwrap();
        assert_eq!(again, out);
        let other: BTreeSet<usize> = apply_protocol(&mixed, &PerturbationConfig { seed: 4, ..cfg })
            .unwrap()
            .replaced
            .into_iter()
            .collect();
        assert_ne!(other, out.replaced.iter().copied().collect());
    }

    #[test]
    fn config_validation() {
        let bad = PerturbationConfig {
            categorical_noise_weights: [0.5, 0.5, 0.5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PerturbationConfig { cell_probability: 0.0, ..Default::default() }.validate().is_err());
    }
}
