//! Desk-scale stand-in for external tabular generators. Not a model of any
//! published generator; it exists so experiments can run without external
//! synthetic files.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{decimal_places, format_decimal, Cell, ColumnKind, Row, TableRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// Each column sampled on its own: normal fit for numbers, empirical
    /// frequencies for categories. Inter-column structure is lost.
    IndependentMarginals,
    /// A real row with every number scaled by a factor in `[0.95, 1.05]`.
    Jitter,
}

enum Marginal {
    Numeric {
        normal: Option<Normal<f64>>,
        missing_rate: f64,
        decimals: usize,
    },
    Categorical {
        values: Vec<String>,
        weights: WeightedIndex<usize>,
    },
}

impl Marginal {
    fn fit(table: &TableRecord, col: usize) -> Self {
        let schema = &table.schema[col];
        let cells = table.rows.iter().map(|r| &r[col]);
        match schema.kind {
            ColumnKind::Numeric => {
                let values: Vec<f64> = cells.clone().filter_map(|c| c.number).collect();
                let missing = table.len() - values.len();
                let normal = (!values.is_empty()).then(|| {
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    Normal::new(mean, var.sqrt()).expect("finite moments")
                });
                Marginal::Numeric {
                    normal,
                    missing_rate: missing as f64 / table.len() as f64,
                    decimals: schema.decimals,
                }
            }
            ColumnKind::Categorical => {
                let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
                for c in cells {
                    *freq.entry(c.text.as_str()).or_default() += 1;
                }
                let values = freq.keys().map(|s| s.to_string()).collect();
                let weights = WeightedIndex::new(freq.values().copied()).expect("nonempty column");
                Marginal::Categorical { values, weights }
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Cell {
        match self {
            Marginal::Numeric {
                normal,
                missing_rate,
                decimals,
            } => match normal {
                Some(n) if rng.random::<f64>() >= *missing_rate => {
                    Cell::new(format_decimal(n.sample(rng), *decimals))
                }
                _ => Cell::new(""),
            },
            Marginal::Categorical { values, weights } => Cell::new(values[weights.sample(rng)].clone()),
        }
    }
}

/// Renders `x` with `decimals` places, rounding toward `anchor` so the
/// result stays between `x` and `anchor`.
fn round_toward(x: f64, anchor: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let r = if x >= anchor {
        (scaled + 1e-9).floor()
    } else {
        (scaled - 1e-9).ceil()
    };
    format_decimal(r / scale, decimals)
}

pub fn surrogate_synthesize(real: &TableRecord, mode: SurrogateMode, count: usize, seed: u64) -> Result<Vec<Row>> {
    if real.is_empty() {
        return Err(Error::protocol(format!("table {} has no rows to imitate", real.name)));
    }
    real.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SurrogateMode::IndependentMarginals => {
            let marginals: Vec<Marginal> = (0..real.schema.len()).map(|c| Marginal::fit(real, c)).collect();
            Ok((0..count)
                .map(|_| marginals.iter().map(|m| m.sample(&mut rng)).collect())
                .collect())
        }
        SurrogateMode::Jitter => Ok((0..count)
            .map(|_| {
                let src = &real.rows[rng.random_range(0..real.len())];
                src.iter()
                    .zip(&real.schema)
                    .map(|(cell, col)| match (col.kind, cell.number) {
                        (ColumnKind::Numeric, Some(v)) => {
                            let factor = 1.0 + rng.random_range(-0.05..=0.05);
                            let decimals = col.decimals.max(decimal_places(&cell.text));
                            Cell::new(round_toward(v * factor, v, decimals))
                        }
                        _ => cell.clone(),
                    })
                    .collect()
            })
            .collect()),
    }
}
