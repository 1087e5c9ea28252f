use super::vocab::{Vocabulary, CLS_ID, PAD_ID};
use crate::corpus::Label;
use crate::error::{Error, Result};

/// One row as a `(d_max, l_max + 1)` character grid. Each real datum holds
/// its characters left-aligned, PAD up to `l_max`, and CLS at index `l_max`.
/// Dummy datums are all PAD and fully masked.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRow {
    pub d_max: usize,
    pub l_max: usize,
    pub token_grid: Vec<u32>,
    pub char_mask: Vec<bool>,
    pub datum_mask: Vec<bool>,
    pub source_table: String,
    pub label: Label,
}

impl EncodedRow {
    /// Width of one grid row (`l_max + 1`).
    pub fn stride(&self) -> usize {
        self.l_max + 1
    }

    pub fn datum_tokens(&self, datum: usize) -> &[u32] {
        &self.token_grid[datum * self.stride()..(datum + 1) * self.stride()]
    }

    pub fn datum_char_mask(&self, datum: usize) -> &[bool] {
        &self.char_mask[datum * self.stride()..(datum + 1) * self.stride()]
    }

    pub fn real_datums(&self) -> usize {
        self.datum_mask.iter().filter(|m| **m).count()
    }
}

/// Batch padding targets: most datums in a row and longest datum (in characters).
pub fn batch_geometry<R: AsRef<[S]>, S: AsRef<str>>(rows: &[R]) -> (usize, usize) {
    let d_max = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
    let l_max = rows
        .iter()
        .flat_map(|r| r.as_ref().iter().map(|d| d.as_ref().chars().count()))
        .max()
        .unwrap_or(0);
    (d_max, l_max)
}

pub fn encode_row<S: AsRef<str>>(
    datums: &[S],
    vocab: &Vocabulary,
    d_max: usize,
    l_max: usize,
    source_table: &str,
    label: Label,
) -> Result<EncodedRow> {
    if datums.len() > d_max {
        return Err(Error::Encoding(format!(
            "row has {} datums, batch allows {d_max}",
            datums.len()
        )));
    }
    let stride = l_max + 1;
    let mut token_grid = vec![PAD_ID; d_max * stride];
    let mut char_mask = vec![false; d_max * stride];
    let mut datum_mask = vec![false; d_max];
    for (i, datum) in datums.iter().enumerate() {
        let datum = datum.as_ref();
        let len = datum.chars().count();
        if len > l_max {
            return Err(Error::Encoding(format!(
                "datum {datum:?} has {len} characters, limit is {l_max}"
            )));
        }
        let base = i * stride;
        for (j, c) in datum.chars().enumerate() {
            token_grid[base + j] = vocab.id(c);
            char_mask[base + j] = true;
        }
        token_grid[base + l_max] = CLS_ID;
        char_mask[base + l_max] = true;
        datum_mask[i] = true;
    }
    Ok(EncodedRow {
        d_max,
        l_max,
        token_grid,
        char_mask,
        datum_mask,
        source_table: source_table.to_string(),
        label,
    })
}

/// A row as one character sequence: CLS, then every datum concatenated,
/// then PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatEncodedRow {
    pub tokens: Vec<u32>,
    pub mask: Vec<bool>,
    pub source_table: String,
    pub label: Label,
}

/// Characters in the concatenated row text.
pub fn flat_length<S: AsRef<str>>(datums: &[S]) -> usize {
    datums.iter().map(|d| d.as_ref().chars().count()).sum()
}

/// Encodes into `max_len + 1` slots; `capacity` bounds `max_len`.
pub fn encode_flat<S: AsRef<str>>(
    datums: &[S],
    vocab: &Vocabulary,
    max_len: usize,
    capacity: usize,
    source_table: &str,
    label: Label,
) -> Result<FlatEncodedRow> {
    let len = flat_length(datums);
    if len > capacity {
        return Err(Error::Encoding(format!(
            "row text has {len} characters, positional capacity is {capacity}"
        )));
    }
    if len > max_len {
        return Err(Error::Encoding(format!(
            "row text has {len} characters, batch allows {max_len}"
        )));
    }
    let mut tokens = vec![PAD_ID; max_len + 1];
    let mut mask = vec![false; max_len + 1];
    tokens[0] = CLS_ID;
    mask[0] = true;
    for (j, c) in datums.iter().flat_map(|d| d.as_ref().chars()).enumerate() {
        tokens[j + 1] = vocab.id(c);
        mask[j + 1] = true;
    }
    Ok(FlatEncodedRow {
        tokens,
        mask,
        source_table: source_table.to_string(),
        label,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::textualizer::UNK_ID;

    fn vocab() -> Vocabulary {
        Vocabulary::from_strings(["a:1", "ab:1", "c:22", "x:9"])
    }

    #[test]
    fn padding_layout() {
        let v = vocab();
        let r = encode_row(&["a:1"], &v, 2, 4, "t", Label::Real).unwrap();
        let id = |c| v.id(c);
        assert_eq!(r.datum_tokens(0), &[id('a'), id(':'), id('1'), PAD_ID, CLS_ID]);
        assert_eq!(r.datum_tokens(1), &[PAD_ID; 5]);
        assert_eq!(r.datum_mask, [true, false]);
        assert_eq!(r.datum_char_mask(0), &[true, true, true, false, true]);
        assert!(r.datum_char_mask(1).iter().all(|m| !m));
    }

    #[test]
    fn exact_length_has_no_padding() {
        let v = vocab();
        let r = encode_row(&["c:22"], &v, 1, 4, "t", Label::Real).unwrap();
        assert!(!r.datum_tokens(0).contains(&PAD_ID));
    }

    #[test]
    fn unseen_character_is_unk() {
        let v = vocab();
        let r = encode_row(&["é:1"], &v, 1, 3, "t", Label::Real).unwrap();
        assert_eq!(r.datum_tokens(0)[0], UNK_ID);
    }

    #[test]
    fn long_datum_errors() {
        let err = encode_row(&["abcdef"], &vocab(), 1, 3, "t", Label::Real).unwrap_err();
        assert!(err.to_string().contains("abcdef"));
    }

    #[test]
    fn geometry() {
        let batch = vec![vec!["ab:1", "c:22"], vec!["x:9"]];
        assert_eq!(batch_geometry(&batch), (2, 4));
        assert_eq!(batch_geometry(&batch[1..]), (1, 3));
        let twice = vec![batch[0].clone(), batch[0].clone()];
        assert_eq!(batch_geometry(&twice), batch_geometry(&batch[..1]));
    }

    #[test]
    fn flat_layout() {
        let v = vocab();
        let r = encode_flat(&["a:1", "x:9"], &v, 8, 4096, "t", Label::Real).unwrap();
        assert_eq!(r.tokens[0], CLS_ID);
        assert_eq!(v.decode(&r.tokens), "a:1x:9");
        assert_eq!(r.mask.iter().filter(|m| **m).count(), 7);
        assert!(encode_flat(&["a:1", "x:9"], &v, 8, 5, "t", Label::Real).is_err());
    }

    proptest! {
        #[test]
        fn masks_and_round_trip(datums in prop::collection::vec("[a-c:0-9é]{0,6}", 1..5), extra in 0usize..3) {
            let v = vocab();
            let (d, l) = batch_geometry(std::slice::from_ref(&datums));
            let r = encode_row(&datums, &v, d + extra, l, "t", Label::Synthetic).unwrap();
            for (tok, m) in r.token_grid.iter().zip(&r.char_mask) {
                prop_assert_eq!(*m, *tok != PAD_ID);
                prop_assert!((*tok as usize) < v.size());
            }
            for i in 0..r.d_max {
                prop_assert_eq!(r.datum_mask[i], r.datum_char_mask(i).iter().any(|m| *m));
            }
            for (i, datum) in datums.iter().enumerate() {
                prop_assert_eq!(r.datum_tokens(i)[l], CLS_ID);
                let expected: String = datum.chars().map(|c| if v.contains(c) { c } else { '\u{FFFD}' }).collect();
                prop_assert_eq!(v.decode(r.datum_tokens(i)), expected);
            }
        }
    }
}
