//! Labeled tables: ingestion, schema inference, real/synthetic mixing,
//! table-level splits and the desk-scale surrogate generator.

mod ingest;
mod mixing;
mod numeric_text;
mod split;
mod surrogate;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ingest::{load_manifest, load_table, load_table_with_schema, Manifest, ManifestEntry};
pub use mixing::{mix_table, SyntheticSource, GENERATOR_COUNT};
pub use numeric_text::{decimal_places, format_decimal, parse_decimal};
pub use split::{make_split_plans, SplitPlan, DEFAULT_RATIOS};
pub use surrogate::{surrogate_synthesize, SurrogateMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Social,
    Finance,
    Science,
    Other,
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "social" => Ok(Domain::Social),
            "finance" => Ok(Domain::Finance),
            "science" => Ok(Domain::Science),
            "other" => Ok(Domain::Other),
            _ => Err(format!("unknown domain {s:?}")),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::Social => "social",
            Domain::Finance => "finance",
            Domain::Science => "science",
            Domain::Other => "other",
        };
        f.write_str(s)
    }
}

/// Synthetic rows are the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Synthetic,
}

impl Label {
    pub fn is_synthetic(self) -> bool {
        self == Label::Synthetic
    }

    pub fn target(self) -> f64 {
        if self.is_synthetic() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// One table cell: the text as it appeared in the source plus its parsed
/// value when the text is a decimal number. Missing cells are empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub text: String,
    pub number: Option<f64>,
}

impl Cell {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let number = parse_decimal(&text);
        Self { text, number }
    }

    pub fn is_missing(&self) -> bool {
        self.text.is_empty()
    }
}

pub type Row = Vec<Cell>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Position of the column in the source file; anonymized names use it.
    pub canonical_index: usize,
    pub observed_min: Option<f64>,
    pub observed_max: Option<f64>,
    pub category_set: BTreeSet<String>,
    pub char_vocabulary: BTreeSet<char>,
    /// Most frequent number of decimal places among numeric cells.
    pub decimals: usize,
}

impl ColumnSchema {
    /// Numeric iff every non-empty cell parses as a decimal number.
    pub fn infer<'a>(
        name: &str,
        canonical_index: usize,
        cells: impl Iterator<Item = &'a Cell> + Clone,
    ) -> Self {
        let numeric = cells
            .clone()
            .all(|c| c.is_missing() || c.number.is_some());
        let kind = if numeric {
            ColumnKind::Numeric
        } else {
            ColumnKind::Categorical
        };
        Self::with_kind(name, canonical_index, kind, cells)
    }

    /// Statistics for a column whose kind is already decided.
    pub fn with_kind<'a>(
        name: &str,
        canonical_index: usize,
        kind: ColumnKind,
        cells: impl Iterator<Item = &'a Cell>,
    ) -> Self {
        let mut schema = Self {
            name: name.to_string(),
            kind,
            canonical_index,
            observed_min: None,
            observed_max: None,
            category_set: BTreeSet::new(),
            char_vocabulary: BTreeSet::new(),
            decimals: 0,
        };
        let mut decimal_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for cell in cells {
            schema.char_vocabulary.extend(cell.text.chars());
            match kind {
                ColumnKind::Numeric => {
                    if let Some(v) = cell.number {
                        schema.observed_min = Some(schema.observed_min.map_or(v, |m| m.min(v)));
                        schema.observed_max = Some(schema.observed_max.map_or(v, |m| m.max(v)));
                        *decimal_counts.entry(decimal_places(&cell.text)).or_default() += 1;
                    }
                }
                ColumnKind::Categorical => {
                    if !cell.is_missing() {
                        schema.category_set.insert(cell.text.clone());
                    }
                }
            }
        }
        // Ties resolve to the smaller count (BTreeMap iterates ascending).
        schema.decimals = decimal_counts
            .iter()
            .fold((0, 0), |best, (d, c)| if *c > best.1 { (*d, *c) } else { best })
            .0;
        schema
    }
}

/// A labeled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub name: String,
    pub domain: Domain,
    pub schema: Vec<ColumnSchema>,
    pub rows: Vec<Row>,
    pub labels: Vec<Label>,
    /// Generator that produced each row; empty for real rows.
    pub generator_tags: Vec<String>,
}

impl TableRecord {
    /// A table of real rows with schema inferred from the cells.
    pub fn from_real_rows(name: &str, domain: Domain, columns: &[String], rows: Vec<Row>) -> Self {
        let schema = columns
            .iter()
            .enumerate()
            .map(|(i, c)| ColumnSchema::infer(c, i, rows.iter().map(|r| &r[i])))
            .collect();
        let n = rows.len();
        Self {
            name: name.to_string(),
            domain,
            schema,
            rows,
            labels: vec![Label::Real; n],
            generator_tags: vec![String::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.schema.iter().map(|c| c.name.clone()).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// Recomputes per-column statistics over all rows, keeping the kinds.
    pub fn refresh_schema(&mut self) {
        let rows = &self.rows;
        for (i, col) in self.schema.iter_mut().enumerate() {
            *col = ColumnSchema::with_kind(&col.name, col.canonical_index, col.kind, rows.iter().map(|r| &r[i]));
        }
    }

    /// Checks the structural invariants (row widths, parallel vectors).
    pub fn validate(&self) -> crate::Result<()> {
        let width = self.schema.len();
        if self.labels.len() != self.rows.len() || self.generator_tags.len() != self.rows.len() {
            return Err(crate::Error::protocol(format!(
                "table {}: {} rows, {} labels, {} generator tags",
                self.name,
                self.rows.len(),
                self.labels.len(),
                self.generator_tags.len()
            )));
        }
        if let Some((i, r)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(crate::Error::protocol(format!(
                "table {}: row {i} has {} values for {width} columns",
                self.name,
                r.len()
            )));
        }
        Ok(())
    }
}

/// Groups tables by domain tag, preserving corpus order within a group.
pub fn partition_by_domain(corpus: &[TableRecord]) -> BTreeMap<Domain, Vec<TableRecord>> {
    let mut out: BTreeMap<Domain, Vec<TableRecord>> = BTreeMap::new();
    for t in corpus {
        out.entry(t.domain).or_default().push(t.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(v: &[&str]) -> Vec<Cell> {
        v.iter().map(|s| Cell::new(*s)).collect()
    }

    #[test]
    fn numeric_inference_rule() {
        let c = cells(&["1", "2.5", "", "-3"]);
        let s = ColumnSchema::infer("x", 0, c.iter());
        assert_eq!(s.kind, ColumnKind::Numeric);
        assert_eq!(s.observed_min, Some(-3.0));
        assert_eq!(s.observed_max, Some(2.5));
        let c = cells(&["1.5", "2", "x"]);
        let s = ColumnSchema::infer("x", 0, c.iter());
        assert_eq!(s.kind, ColumnKind::Categorical);
        assert_eq!(s.category_set.len(), 3);
    }

    #[test]
    fn char_vocabulary_is_exact() {
        let c = cells(&["ab", "ba", "c"]);
        let s = ColumnSchema::infer("x", 0, c.iter());
        assert_eq!(s.char_vocabulary, ['a', 'b', 'c'].into_iter().collect());
    }

    #[test]
    fn modal_decimals() {
        let c = cells(&["1.25", "2.50", "3.1", "4.00"]);
        assert_eq!(ColumnSchema::infer("x", 0, c.iter()).decimals, 2);
    }

    fn named(name: &str, domain: Domain) -> TableRecord {
        TableRecord::from_real_rows(name, domain, &["a".into()], vec![vec![Cell::new("1")]])
    }

    #[test]
    fn partition_preserves_order() {
        let corpus = vec![
            named("adult", Domain::Social),
            named("abalone", Domain::Science),
            named("heloc", Domain::Social),
        ];
        let parts = partition_by_domain(&corpus);
        let social: Vec<_> = parts[&Domain::Social].iter().map(|t| t.name.as_str()).collect();
        assert_eq!(social, ["adult", "heloc"]);
        assert!(!parts.contains_key(&Domain::Finance));
        assert_eq!(partition_by_domain(&corpus[..1]).len(), 1);
    }
}
