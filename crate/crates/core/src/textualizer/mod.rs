//! Rows to characters: datum rendering, the character vocabulary, padded
//! encodings for both detector variants, and column permutations.

mod encode;
mod permutation;
mod vocab;

pub use encode::{batch_geometry, encode_flat, encode_row, flat_length, EncodedRow, FlatEncodedRow};
pub use permutation::{apply_permutation, sample_permutation, PermutationSpec};
pub use vocab::{build_vocabulary, Vocabulary, CLS_ID, PAD_ID, UNK_ID};

use crate::corpus::{Cell, ColumnSchema, TableRecord};

/// Renders each cell as `<column>:<value>`. With `anonymize`, the column
/// name becomes `feature_<k>` where `k` is the column's index in the source
/// file, so the name does not depend on presentation order.
pub fn render_datums(row: &[Cell], schema: &[ColumnSchema], anonymize: bool) -> Vec<String> {
    debug_assert_eq!(row.len(), schema.len());
    row.iter()
        .zip(schema)
        .map(|(cell, col)| {
            if anonymize {
                format!("feature_{}:{}", col.canonical_index, cell.text)
            } else {
                format!("{}:{}", col.name, cell.text)
            }
        })
        .collect()
}

/// All rows of `table`, rendered.
pub fn render_table(table: &TableRecord, anonymize: bool) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|r| render_datums(r, &table.schema, anonymize))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, TableRecord};

    fn table() -> TableRecord {
        TableRecord::from_real_rows(
            "t",
            Domain::Other,
            &["age".into(), "job".into(), "c".into(), "x".into()],
            vec![vec![Cell::new("39"), Cell::new(""), Cell::new("1.50"), Cell::new("x")]],
        )
    }

    #[test]
    fn datum_template() {
        let t = table();
        let d = render_datums(&t.rows[0], &t.schema, false);
        assert_eq!(d, ["age:39", "job:", "c:1.50", "x:x"]);
        let a = render_datums(&t.rows[0], &t.schema, true);
        assert_eq!(a[3], "feature_3:x");
    }

    #[test]
    fn anonymized_names_follow_columns() {
        let t = table();
        let spec = PermutationSpec::from_mapping(vec![3, 2, 1, 0]).unwrap();
        let p = apply_permutation(&t, &spec).unwrap();
        let mut a = render_datums(&t.rows[0], &t.schema, true);
        let mut b = render_datums(&p.rows[0], &p.schema, true);
        assert_eq!(b[0], "feature_3:x");
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
