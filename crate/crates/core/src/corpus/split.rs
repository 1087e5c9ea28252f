use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TableRecord;
use crate::error::{Error, Result};

/// Table counts (train, validation, test) for the 14-table corpus.
pub const DEFAULT_RATIOS: (usize, usize, usize) = (8, 3, 3);

/// Table-level partition for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_id: usize,
    pub train_tables: BTreeSet<String>,
    pub validation_tables: BTreeSet<String>,
    pub test_tables: BTreeSet<String>,
    pub seed: u64,
}

impl SplitPlan {
    /// Explicit plan from table names.
    pub fn explicit(train: &[&str], validation: &[&str], test: &[&str]) -> Self {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            fold_id: 0,
            train_tables: set(train),
            validation_tables: set(validation),
            test_tables: set(test),
            seed: 0,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train_tables.is_disjoint(&self.validation_tables)
            && self.train_tables.is_disjoint(&self.test_tables)
            && self.validation_tables.is_disjoint(&self.test_tables)
    }
}

/// Seeded rotation: tables are shuffled once, then fold `f` takes its test
/// window starting at `f * test`, the validation window right after it, and
/// trains on the rest.
pub fn make_split_plans(
    corpus: &[TableRecord],
    folds: usize,
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    if folds == 0 {
        return Err(Error::protocol("at least one fold is required"));
    }
    let (train, val, test) = ratios;
    let total = train + val + test;
    if corpus.len() < total {
        return Err(Error::protocol(format!(
            "split ratios need {total} tables, corpus has {}",
            corpus.len()
        )));
    }
    if corpus.len() != total {
        return Err(Error::protocol(format!(
            "split ratios cover {total} tables but corpus has {}",
            corpus.len()
        )));
    }
    let mut names: Vec<String> = corpus.iter().map(|t| t.name.clone()).collect();
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() != names.len() {
        return Err(Error::protocol("table names must be unique"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names.shuffle(&mut rng);
    let plans = (0..folds)
        .map(|f| {
            let start = (f * test) % total;
            let rotated: Vec<&String> = names.iter().cycle().skip(start).take(total).collect();
            let collect = |r: std::ops::Range<usize>| rotated[r].iter().map(|s| s.to_string()).collect();
            SplitPlan {
                fold_id: f,
                test_tables: collect(0..test),
                validation_tables: collect(test..test + val),
                train_tables: collect(test + val..total),
                seed,
            }
        })
        .collect();
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::{Cell, Domain};

    fn corpus(n: usize) -> Vec<TableRecord> {
        (0..n)
            .map(|i| {
                TableRecord::from_real_rows(&format!("t{i}"), Domain::Other, &["a".into()], vec![vec![Cell::new("1")]])
            })
            .collect()
    }

    #[test]
    fn fourteen_tables_three_folds() {
        let c = corpus(14);
        let plans = make_split_plans(&c, 3, DEFAULT_RATIOS, 11).unwrap();
        assert_eq!(plans.len(), 3);
        let mut test_count: BTreeMap<String, usize> = BTreeMap::new();
        for p in &plans {
            assert!(p.is_disjoint());
            assert_eq!((p.train_tables.len(), p.validation_tables.len(), p.test_tables.len()), (8, 3, 3));
            for t in &p.test_tables {
                *test_count.entry(t.clone()).or_default() += 1;
            }
        }
        // ceil(3 * 3 / 14) = 1
        assert!(test_count.values().all(|c| *c <= 1));
    }

    #[test]
    fn single_fold_two_tables() {
        let c = corpus(2);
        let p = &make_split_plans(&c, 1, (1, 0, 1), 4).unwrap()[0];
        assert_eq!(p.train_tables.len(), 1);
        assert_eq!(p.test_tables.len(), 1);
        assert!(p.validation_tables.is_empty());
        assert!(p.is_disjoint());
    }

    #[test]
    fn deterministic() {
        let c = corpus(6);
        assert_eq!(
            make_split_plans(&c, 3, (2, 2, 2), 9).unwrap(),
            make_split_plans(&c, 3, (2, 2, 2), 9).unwrap()
        );
    }

    #[test]
    fn too_small_corpus() {
        assert!(matches!(make_split_plans(&corpus(3), 1, (2, 1, 1), 0), Err(Error::Protocol(_))));
    }
}
