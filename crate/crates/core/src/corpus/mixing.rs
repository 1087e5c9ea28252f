use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Label, Row, TableRecord};
use crate::error::{Error, Result};

pub const GENERATOR_COUNT: usize = 4;

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub tag: String,
    pub rows: Vec<Row>,
}

/// Number of rows drawn from generator `g` when the real table has `n` rows.
/// The `n mod 4` remainder goes to the first generators, one each.
pub fn rows_per_generator(n: usize, g: usize) -> usize {
    n / GENERATOR_COUNT + usize::from(g < n % GENERATOR_COUNT)
}

/// Builds a balanced table of `n` real rows and `n` synthetic rows, a
/// quarter from each of four generators.
pub fn mix_table(real: &TableRecord, sources: &[SyntheticSource], seed: u64) -> Result<TableRecord> {
    if sources.len() != GENERATOR_COUNT {
        return Err(Error::protocol(format!(
            "mixing needs {GENERATOR_COUNT} synthetic sources, got {}",
            sources.len()
        )));
    }
    real.validate()?;
    if real.labels.iter().any(|l| l.is_synthetic()) {
        return Err(Error::protocol(format!("table {} already contains synthetic rows", real.name)));
    }
    let n = real.len();
    let width = real.schema.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<(Row, Label, String)> = real
        .rows
        .iter()
        .map(|r| (r.clone(), Label::Real, String::new()))
        .collect();
    for (g, src) in sources.iter().enumerate() {
        let want = rows_per_generator(n, g);
        if src.rows.len() < want {
            return Err(Error::protocol(format!(
                "generator {} supplies {} rows for table {}, {want} needed",
                src.tag,
                src.rows.len(),
                real.name
            )));
        }
        if let Some(r) = src.rows.iter().find(|r| r.len() != width) {
            return Err(Error::protocol(format!(
                "generator {} row has {} values for {width} columns",
                src.tag,
                r.len()
            )));
        }
        let mut picks: Vec<usize> = (0..src.rows.len()).collect();
        picks.shuffle(&mut rng);
        for &i in &picks[..want] {
            entries.push((src.rows[i].clone(), Label::Synthetic, src.tag.clone()));
        }
    }
    entries.shuffle(&mut rng);
    let mut out = TableRecord {
        name: real.name.clone(),
        domain: real.domain,
        schema: real.schema.clone(),
        rows: Vec::with_capacity(entries.len()),
        labels: Vec::with_capacity(entries.len()),
        generator_tags: Vec::with_capacity(entries.len()),
    };
    for (row, label, tag) in entries {
        out.rows.push(row);
        out.labels.push(label);
        out.generator_tags.push(tag);
    }
    out.refresh_schema();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::{Cell, Domain};

    fn real(n: usize) -> TableRecord {
        let rows = (0..n).map(|i| vec![Cell::new(i.to_string())]).collect();
        TableRecord::from_real_rows("t", Domain::Other, &["x".into()], rows)
    }

    fn sources(n: usize) -> Vec<SyntheticSource> {
        (0..4)
            .map(|g| SyntheticSource {
                tag: format!("gen{g}"),
                rows: (0..n).map(|i| vec![Cell::new(format!("{}", 1000 * (g + 1) + i))]).collect(),
            })
            .collect()
    }

    fn per_generator(t: &TableRecord) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for tag in t.generator_tags.iter().filter(|t| !t.is_empty()) {
            *m.entry(tag.clone()).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn quarter_per_generator() {
        let t = mix_table(&real(1000), &sources(300), 3).unwrap();
        assert_eq!(t.len(), 2000);
        assert!(per_generator(&t).values().all(|c| *c == 250));
    }

    #[test]
    fn remainder_round_robin() {
        let t = mix_table(&real(10), &sources(3), 3).unwrap();
        assert_eq!(t.len(), 20);
        let counts: Vec<usize> = per_generator(&t).values().copied().collect();
        assert_eq!(counts, [3, 3, 2, 2]);
    }

    #[test]
    fn identical_sources_balance() {
        let same = vec![vec![Cell::new("7")]];
        let src: Vec<_> = (0..4)
            .map(|g| SyntheticSource {
                tag: format!("g{g}"),
                rows: same.clone(),
            })
            .collect();
        let t = mix_table(&real(4), &src, 0).unwrap();
        assert_eq!(t.count(Label::Real), 4);
        assert_eq!(t.count(Label::Synthetic), 4);
    }

    #[test]
    fn protocol_errors() {
        assert!(matches!(mix_table(&real(8), &sources(8)[..3], 0), Err(Error::Protocol(_))));
        assert!(matches!(mix_table(&real(9), &sources(2), 0), Err(Error::Protocol(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = mix_table(&real(30), &sources(10), 5).unwrap();
        let b = mix_table(&real(30), &sources(10), 5).unwrap();
        assert_eq!(a, b);
        let c = mix_table(&real(30), &sources(10), 6).unwrap();
        assert_ne!(a.rows, c.rows);
    }
}
