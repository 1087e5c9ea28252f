use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tabwild_core::corpus::{load_manifest, toy, SurrogateMode, TableRecord};

use crate::error::CliError;

/// Where a command's tables come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Real and synthetic CSVs listed in a manifest, mixed on load.
    Manifest { path: PathBuf, mix_seed: u64 },
    /// The built-in four-table toy corpus with surrogate synthetic rows.
    Toy { rows: usize, seed: u64, surrogate: SurrogateMode },
    /// A directory of mixed tables as written by `mix` or `perturb`.
    Tables { dir: PathBuf },
}

impl CorpusSource {
    pub fn load(&self) -> Result<Vec<TableRecord>, CliError> {
        let tables = match self {
            CorpusSource::Manifest { path, mix_seed } => {
                let manifest = load_manifest(path)
                    .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
                manifest.load_corpus(*mix_seed)?
            }
            CorpusSource::Toy { rows, seed, surrogate } => toy::toy_corpus_with(*rows, *surrogate, *seed)?,
            CorpusSource::Tables { dir } => read_table_dir(dir)?,
        };
        for t in &tables {
            check_table_name(&t.name)?;
        }
        Ok(tables)
    }
}

/// Table names become file names, so they must stay inside the output directory.
pub fn check_table_name(name: &str) -> Result<(), CliError> {
    let bad = name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\', '\0']);
    if bad {
        return Err(CliError::Config(format!("table name {name:?} cannot be used as a file name")));
    }
    Ok(())
}

/// Reads every `*.json` table in `dir`, in file-name order.
pub fn read_table_dir(dir: &Path) -> Result<Vec<TableRecord>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("cannot list table directory {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no *.json tables in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let file = fs::File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let table: TableRecord = serde_json::from_reader(BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            table.validate()?;
            Ok(table)
        })
        .collect()
}

/// Writes `tables` as `<dir>/<name>.json`.
pub fn write_table_dir(dir: &Path, tables: &[TableRecord]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    tables
        .iter()
        .map(|t| {
            check_table_name(&t.name)?;
            let path = dir.join(format!("{}.json", t.name));
            let mut w = BufWriter::new(fs::File::create(&path)?);
            serde_json::to_writer(&mut w, t).map_err(|e| CliError::Data(e.to_string()))?;
            w.flush()?;
            Ok(path)
        })
        .collect()
}

/// Keeps the tables named in `names`, in that order; all tables when empty.
pub fn select(tables: Vec<TableRecord>, names: &[String]) -> Result<Vec<TableRecord>, CliError> {
    if names.is_empty() {
        return Ok(tables);
    }
    names
        .iter()
        .map(|n| {
            tables
                .iter()
                .find(|t| &t.name == n)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("table {n:?} is not in the corpus")))
        })
        .collect()
}
