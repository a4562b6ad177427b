//! Word–id vocabulary with reserved control tokens.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const UNK: u32 = 3;

/// Display names for the reserved ids, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Bidirectional word↔id map. Ids 0–3 are reserved; surface words get ids
/// from 4 upward in descending-frequency order (ties broken lexicographically),
/// which makes construction deterministic.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    word_to_id: BTreeMap<String, u32>,
    id_to_word: Vec<String>,
    frequencies: Vec<u64>,
    min_count: u64,
}

impl Vocabulary {
    /// Build from a tokenized corpus, keeping words that occur at least
    /// `min_count` times. An empty corpus yields the reserved tokens only.
    pub fn build(corpus: &[Vec<String>], min_count: u64) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(CoreError::Config(
                "min_count must be at least 1".to_string(),
            ));
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for sentence in corpus {
            for token in sentence {
                if RESERVED.contains(&token.as_str()) {
                    return Err(CoreError::Contract(format!(
                        "reserved token {token:?} appeared as a surface word"
                    )));
                }
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocabulary::reserved_only(min_count);
        for (word, freq) in kept {
            let id = vocab.id_to_word.len() as u32;
            vocab.word_to_id.insert(word.to_string(), id);
            vocab.id_to_word.push(word.to_string());
            vocab.frequencies.push(freq);
        }
        Ok(vocab)
    }

    fn reserved_only(min_count: u64) -> Vocabulary {
        Vocabulary {
            word_to_id: BTreeMap::new(),
            id_to_word: RESERVED.iter().map(|s| s.to_string()).collect(),
            frequencies: alloc::vec![0; RESERVED.len()],
            min_count,
        }
    }

    /// Reassemble from `(word, frequency)` rows in id order starting at id 4
    /// (as stored in a vocabulary file).
    pub fn from_entries(entries: Vec<(String, u64)>, min_count: u64) -> Result<Vocabulary> {
        let mut vocab = Vocabulary::reserved_only(min_count.max(1));
        for (word, freq) in entries {
            if word.is_empty() || RESERVED.contains(&word.as_str()) {
                return Err(CoreError::Contract(format!(
                    "invalid vocabulary surface word {word:?}"
                )));
            }
            let id = vocab.id_to_word.len() as u32;
            if vocab.word_to_id.insert(word.clone(), id).is_some() {
                return Err(CoreError::Contract(format!(
                    "duplicate vocabulary word {word:?}"
                )));
            }
            vocab.id_to_word.push(word);
            vocab.frequencies.push(freq);
        }
        Ok(vocab)
    }

    /// Total number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved ids are always present
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    /// `(id, word, frequency)` rows in id order, reserved rows first.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &str, u64)> {
        self.id_to_word
            .iter()
            .zip(&self.frequencies)
            .enumerate()
            .map(|(id, (word, &freq))| (id as u32, word.as_str(), freq))
    }

    /// Wrap a token sequence as `[START] ids… [END]`, mapping out-of-vocabulary
    /// tokens to `UNK`.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(START);
        for token in tokens {
            ids.push(self.id(token).unwrap_or(UNK));
        }
        ids.push(END);
        ids
    }

    /// Surface string for an id sequence: drops `PAD`/`START`, stops at the
    /// first `END` (anything after it is ignored), joins words with single
    /// spaces. Ids actually consumed must be in range.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id == END {
                break;
            }
            if id == PAD || id == START {
                continue;
            }
            let word = self.word(id).ok_or_else(|| {
                CoreError::Contract(format!(
                    "id {id} out of range for vocabulary of {}",
                    self.len()
                ))
            })?;
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn frequency_then_lexicographic_ordering() {
        let v = Vocabulary::build(&[s(&["a", "a", "b"])], 1).unwrap();
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));

        let v = Vocabulary::build(&[s(&["a", "b"]), s(&["b"])], 1).unwrap();
        assert_eq!(v.id("b"), Some(4));
        assert_eq!(v.id("a"), Some(5));
    }

    #[test]
    fn min_count_threshold_and_empty_corpus() {
        let v = Vocabulary::build(&[s(&["a", "b"])], 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), None);

        let v = Vocabulary::build(&[], 1).unwrap();
        assert_eq!(v.len(), 4);
        assert!(Vocabulary::build(&[], 0).is_err());
    }

    #[test]
    fn encode_wraps_with_markers() {
        let v = Vocabulary::build(&[s(&["a"])], 1).unwrap();
        assert_eq!(v.encode(&[]), vec![START, END]);
        assert_eq!(v.encode(&s(&["a"])), vec![START, 4, END]);
        assert_eq!(v.encode(&s(&["zzz"])), vec![START, UNK, END]);
    }

    #[test]
    fn decode_drops_markers_and_truncates_at_end() {
        let v = Vocabulary::build(&[s(&["a"])], 1).unwrap();
        assert_eq!(v.decode(&[START, 4, END]).unwrap(), "a");
        assert_eq!(v.decode(&[START, END]).unwrap(), "");
        // Ids after END are ignored even when out of range.
        assert_eq!(v.decode(&[START, 4, END, 5]).unwrap(), "a");
        assert!(v.decode(&[START, 9, END]).is_err());
    }

    #[test]
    fn reserved_surface_words_are_rejected() {
        assert!(Vocabulary::build(&[s(&["<pad>"])], 1).is_err());
    }

    #[test]
    fn lookup_roundtrip() {
        let v = Vocabulary::build(&[s(&["x", "y", "x"])], 1).unwrap();
        for (id, word, _freq) in v.entries().skip(4) {
            assert_eq!(v.id(word), Some(id));
            assert_eq!(v.word(id), Some(word));
        }
    }
}
