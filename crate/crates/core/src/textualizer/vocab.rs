use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::render_table;
use crate::corpus::TableRecord;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
/// Characters not seen when the vocabulary was built.
pub const UNK_ID: u32 = 2;
const FIRST_CHAR_ID: u32 = 3;

/// Character-level vocabulary. Ids are dense: the three specials, then one
/// id per known character in code-point order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "VocabularyRepr", try_from = "VocabularyRepr")]
pub struct Vocabulary {
    char_to_id: BTreeMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    characters: String,
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            characters: v.char_to_id.keys().collect(),
        }
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = String;

    fn try_from(r: VocabularyRepr) -> Result<Self, Self::Error> {
        let chars: Vec<char> = r.characters.chars().collect();
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err("vocabulary characters must be strictly increasing".into());
        }
        Ok(Vocabulary::from_chars(chars))
    }
}

impl Vocabulary {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let char_to_id = set
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, FIRST_CHAR_ID + i as u32))
            .collect();
        Self { char_to_id }
    }

    pub fn from_strings<'a>(strings: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(strings.into_iter().flat_map(str::chars))
    }

    /// Number of ids including the specials.
    pub fn size(&self) -> usize {
        FIRST_CHAR_ID as usize + self.char_to_id.len()
    }

    pub fn id(&self, c: char) -> u32 {
        self.char_to_id.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, c: char) -> bool {
        self.char_to_id.contains_key(&c)
    }

    pub fn characters(&self) -> impl Iterator<Item = char> + '_ {
        self.char_to_id.keys().copied()
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        if id < FIRST_CHAR_ID {
            return None;
        }
        self.char_to_id.keys().nth((id - FIRST_CHAR_ID) as usize).copied()
    }

    /// Reconstructs text from ids, skipping PAD and CLS. Unknown ids become U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        let by_id: Vec<char> = self.char_to_id.keys().copied().collect();
        ids.iter()
            .filter(|&&id| id != PAD_ID && id != CLS_ID)
            .map(|&id| {
                id.checked_sub(FIRST_CHAR_ID)
                    .and_then(|i| by_id.get(i as usize).copied())
                    .unwrap_or('\u{FFFD}')
            })
            .collect()
    }
}

/// Vocabulary over every rendered datum of `tables`.
pub fn build_vocabulary(tables: &[TableRecord], anonymize: bool) -> Vocabulary {
    let mut chars = BTreeSet::new();
    for t in tables {
        for row in render_table(t, anonymize) {
            for datum in row {
                chars.extend(datum.chars());
            }
        }
    }
    Vocabulary::from_chars(chars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_datum_vocabulary() {
        let v = Vocabulary::from_strings(["a:1"]);
        let mut ids: Vec<u32> = "1:a".chars().map(|c| v.id(c)).collect();
        assert_eq!(ids, [3, 4, 5]);
        ids.extend([PAD_ID, CLS_ID, UNK_ID]);
        ids.sort();
        // PAD, CLS, UNK and three characters, dense from zero.
        assert_eq!(ids, (0..v.size() as u32).collect::<Vec<_>>());
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn union_and_determinism() {
        let a = Vocabulary::from_strings(["ab:1"]);
        let b = Vocabulary::from_strings(["xy:2"]);
        let u = Vocabulary::from_strings(["ab:1", "xy:2"]);
        let expect: BTreeSet<char> = a.characters().chain(b.characters()).collect();
        assert_eq!(u.characters().collect::<BTreeSet<_>>(), expect);
        assert_eq!(u, Vocabulary::from_strings(["xy:2", "ab:1"]));
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = Vocabulary::from_strings(["a:1"]);
        assert_eq!(v.id('z'), UNK_ID);
        assert_eq!(v.decode(&[v.id('a'), CLS_ID, PAD_ID]), "a");
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::from_strings(["héllo:1"]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&s).unwrap(), v);
    }
}
