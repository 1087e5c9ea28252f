use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TableRecord;
use crate::error::{Error, Result};

/// Column reordering: output column `i` is input column `mapping[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub mapping: Vec<usize>,
    /// Fraction of columns that move.
    pub distance: f64,
}

impl PermutationSpec {
    pub fn identity(columns: usize) -> Self {
        Self {
            mapping: (0..columns).collect(),
            distance: 0.0,
        }
    }

    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::protocol(format!("{mapping:?} is not a permutation")));
            }
        }
        let distance = displaced_fraction(&mapping);
        Ok(Self { mapping, distance })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self {
            mapping: inv,
            distance: self.distance,
        }
    }

    pub fn apply<T: Clone>(&self, values: &[T]) -> Result<Vec<T>> {
        if values.len() != self.mapping.len() {
            return Err(Error::protocol(format!(
                "permutation of {} columns applied to {} values",
                self.mapping.len(),
                values.len()
            )));
        }
        Ok(self.mapping.iter().map(|&m| values[m].clone()).collect())
    }
}

fn displaced_fraction(mapping: &[usize]) -> f64 {
    if mapping.is_empty() {
        return 0.0;
    }
    let moved = mapping.iter().enumerate().filter(|(i, m)| *i != **m).count();
    moved as f64 / mapping.len() as f64
}

/// Moves `round(target * columns)` columns (at least two when any move) by
/// deranging a random subset, so the realized distance is exact.
pub fn sample_permutation(columns: usize, target_distance: f64, seed: u64) -> PermutationSpec {
    assert!(columns >= 1, "permutation needs at least one column");
    assert!((0.0..=1.0).contains(&target_distance), "distance must lie in [0, 1]");
    let mut k = (target_distance * columns as f64).round() as usize;
    if k == 1 {
        k = if columns >= 2 { 2 } else { 0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping: Vec<usize> = (0..columns).collect();
    if k >= 2 {
        let chosen = index::sample(&mut rng, columns, k).into_vec();
        let mut targets = chosen.clone();
        // Rejection sampling gives a uniform derangement (~e tries).
        loop {
            targets.shuffle(&mut rng);
            if chosen.iter().zip(&targets).all(|(a, b)| a != b) {
                break;
            }
        }
        for (src, dst) in chosen.iter().zip(&targets) {
            mapping[*src] = *dst;
        }
    }
    let distance = displaced_fraction(&mapping);
    PermutationSpec { mapping, distance }
}

/// Reorders schema and every row; labels are untouched.
pub fn apply_permutation(table: &TableRecord, spec: &PermutationSpec) -> Result<TableRecord> {
    Ok(TableRecord {
        name: table.name.clone(),
        domain: table.domain,
        schema: spec.apply(&table.schema)?,
        rows: table.rows.iter().map(|r| spec.apply(r)).collect::<Result<_>>()?,
        labels: table.labels.clone(),
        generator_tags: table.generator_tags.clone(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::{Cell, Domain};

    #[test]
    fn distance_examples() {
        let id = sample_permutation(7, 0.0, 1);
        assert_eq!(id, PermutationSpec::identity(7));
        let p = sample_permutation(10, 0.2, 2);
        assert_eq!(p.mapping.iter().enumerate().filter(|(i, m)| i != *m).count(), 2);
        assert_eq!(p.distance, 0.2);
        let full = sample_permutation(5, 1.0, 3);
        assert!(full.mapping.iter().enumerate().all(|(i, m)| i != *m));
        assert_eq!(full.distance, 1.0);
        // One column cannot move alone.
        assert_eq!(sample_permutation(10, 0.1, 4).distance, 0.2);
        assert_eq!(sample_permutation(1, 1.0, 4).distance, 0.0);
    }

    #[test]
    fn swap_and_inverse() {
        let t = TableRecord::from_real_rows(
            "t",
            Domain::Other,
            &["a".into(), "b".into(), "c".into()],
            vec![vec![Cell::new("1"), Cell::new("2"), Cell::new("3")]],
        );
        let swap = PermutationSpec::from_mapping(vec![1, 0, 2]).unwrap();
        let p = apply_permutation(&t, &swap).unwrap();
        assert_eq!(p.column_names(), ["b", "a", "c"]);
        assert_eq!(p.rows[0][0].text, "2");
        assert_eq!(apply_permutation(&t, &PermutationSpec::identity(3)).unwrap(), t);
        let spec = sample_permutation(3, 1.0, 9);
        let back = apply_permutation(&apply_permutation(&t, &spec).unwrap(), &spec.inverse()).unwrap();
        assert_eq!(back, t);
        assert!(apply_permutation(&t, &PermutationSpec::identity(2)).is_err());
    }

    proptest! {
        #[test]
        fn realized_distance(columns in 1usize..40, target in 0.0f64..=1.0, seed: u64) {
            let p = sample_permutation(columns, target, seed);
            let check = PermutationSpec::from_mapping(p.mapping.clone()).unwrap();
            prop_assert_eq!(check.distance, p.distance);
            prop_assert_eq!(p.inverse().distance, displaced_fraction(&p.inverse().mapping));
            prop_assert_eq!(p.inverse().distance, p.distance);
        }
    }
}
