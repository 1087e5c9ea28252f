use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Two-level transformer with datum-local positions.
    DatumWise,
    /// One transformer over the concatenated row text with global positions.
    FlatText,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "datum_wise" | "datum-wise" => Ok(Variant::DatumWise),
            "flat_text" | "flat-text" => Ok(Variant::FlatText),
            other => Err(Error::protocol(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DatumWise => "datum_wise",
            Variant::FlatText => "flat_text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub variant: Variant,
    pub adaptation: bool,
    /// Classes of the table head, in class-index order. Empty unless `adaptation`.
    pub table_names: Vec<String>,
    pub anonymize: bool,
    /// Longest datum (characters) the positional table covers.
    pub datum_len_cap: usize,
    /// Longest flat row text the positional table covers.
    pub row_len_cap: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 192,
            layers: 3,
            heads: 6,
            dropout: 0.2,
            batch_size: 64,
            learning_rate: 1e-5,
            variant: Variant::DatumWise,
            adaptation: false,
            table_names: Vec::new(),
            anonymize: false,
            datum_len_cap: 256,
            row_len_cap: 4096,
        }
    }
}

impl DetectorConfig {
    pub fn table_class_count(&self) -> usize {
        if self.adaptation {
            self.table_names.len()
        } else {
            0
        }
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.table_names.iter().position(|t| t == name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::protocol(m));
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.layers == 0 {
            return bad("layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.adaptation && self.table_names.len() < 2 {
            return bad("adaptation needs at least two table classes".into());
        }
        let mut names = self.table_names.clone();
        names.sort();
        names.dedup();
        if names.len() != self.table_names.len() {
            return bad("duplicate table class names".into());
        }
        if self.datum_len_cap == 0 || self.row_len_cap == 0 {
            return bad("positional capacities must be positive".into());
        }
        Ok(())
    }
}
