use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mix_table, Cell, ColumnSchema, Domain, Row, SyntheticSource, TableRecord};
use crate::error::{Error, Result};

fn ingestion(path: &Path, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| ingestion(path, None, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ingestion(path, e.position().map(|p| p.line()), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(ingestion(path, Some(1), "missing header row"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => format!("ragged row: {len} fields, header has {expected_len}"),
                _ => format!("malformed CSV: {e}"),
            };
            ingestion(path, line, message)
        })?;
        rows.push(record.iter().map(Cell::new).collect());
    }
    if rows.is_empty() {
        return Err(ingestion(path, None, "table has no data rows"));
    }
    Ok((header, rows))
}

/// Reads a CSV file of real rows and infers its schema.
pub fn load_table(path: impl AsRef<Path>, name: &str, domain: Domain) -> Result<TableRecord> {
    let path = path.as_ref();
    let (header, rows) = read_csv(path)?;
    Ok(TableRecord::from_real_rows(name, domain, &header, rows))
}

/// Reads rows from a CSV whose columns must include every column of
/// `schema`; values are reordered to the schema's order.
pub fn load_table_with_schema(path: impl AsRef<Path>, schema: &[ColumnSchema]) -> Result<Vec<Row>> {
    let path = path.as_ref();
    let (header, rows) = read_csv(path)?;
    let positions = schema
        .iter()
        .map(|col| {
            header
                .iter()
                .position(|h| *h == col.name)
                .ok_or_else(|| ingestion(path, Some(1), format!("missing column {:?}", col.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows
        .into_iter()
        .map(|r| positions.iter().map(|&i| r[i].clone()).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub domain: Domain,
    pub real_path: PathBuf,
    pub synthetic_paths: Vec<PathBuf>,
}

/// Corpus manifest: a JSON array of [`ManifestEntry`]. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.name.clone()) {
            return Err(Error::protocol(format!("duplicate table name {:?} in manifest", e.name)));
        }
    }
    Ok(Manifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        entries,
    })
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads and mixes one table.
    pub fn load_entry(&self, entry: &ManifestEntry, seed: u64) -> Result<TableRecord> {
        let real = load_table(self.resolve(&entry.real_path), &entry.name, entry.domain)?;
        let sources = entry
            .synthetic_paths
            .iter()
            .map(|p| {
                let tag = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(SyntheticSource {
                    tag,
                    rows: load_table_with_schema(self.resolve(p), &real.schema)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        mix_table(&real, &sources, seed)
    }

    /// Loads and mixes every table; table `i` mixes with `seed + i`.
    pub fn load_corpus(&self, seed: u64) -> Result<Vec<TableRecord>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| self.load_entry(e, seed.wrapping_add(i as u64)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;
    use crate::corpus::ColumnKind;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn infers_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "age,job,score\n39,clerk,1.5\n50,\"sales, east\",2\n,nurse,x\n");
        let t = load_table(&p, "t", Domain::Social).unwrap();
        let kinds: Vec<_> = t.schema.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, [ColumnKind::Numeric, ColumnKind::Categorical, ColumnKind::Categorical]);
        assert_eq!(t.rows[1][1].text, "sales, east");
        assert!(t.rows[2][0].is_missing());
        assert_eq!(t, load_table(&p, "t", Domain::Social).unwrap());
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,b\n1,2\n3\n");
        match load_table(&p, "t", Domain::Other) {
            Err(Error::Ingestion { line, message, .. }) => {
                assert_eq!(line, Some(3));
                assert!(message.contains("ragged"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,b\n");
        assert!(matches!(load_table(&p, "t", Domain::Other), Err(Error::Ingestion { .. })));
        let p = write(dir.path(), "e.csv", "");
        assert!(matches!(load_table(&p, "t", Domain::Other), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn malformed_quote_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,b\n1,2\n\"x,3\n");
        assert!(load_table(&p, "t", Domain::Other).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "r.csv", "a,b\n1,x\n2,y\n3,z\n4,w\n");
        for g in 0..4 {
            write(dir.path(), &format!("g{g}.csv"), "b,a\nq,9\nr,8\n");
        }
        let m = serde_json::json!([{
            "name": "t", "domain": "science", "real_path": "r.csv",
            "synthetic_paths": ["g0.csv", "g1.csv", "g2.csv", "g3.csv"]
        }]);
        let mp = write(dir.path(), "m.json", &m.to_string());
        let manifest = load_manifest(&mp).unwrap();
        let corpus = manifest.load_corpus(1).unwrap();
        assert_eq!(corpus[0].len(), 8);
        let synth = corpus[0]
            .rows
            .iter()
            .zip(&corpus[0].labels)
            .find(|(_, l)| l.is_synthetic())
            .unwrap()
            .0;
        assert!(synth[0].text == "9" || synth[0].text == "8");
    }
}
