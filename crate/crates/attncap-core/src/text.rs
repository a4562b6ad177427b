//! Urdu-aware text normalization and space-based tokenization.
//!
//! Sentences arrive with spaces between words (the corpus was written that
//! way), so segmentation is a plain space split. Multi-word expressions that
//! Urdu treats as single lexical units — compounds, reduplication, affixation,
//! proper nouns — are merged afterwards from a user-supplied lexicon; there is
//! no learned boundary detection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Joiner placed between the parts of a merged compound token. Zero-width
/// non-joiner keeps the rendered text readable while making the merge
/// reversible.
pub const COMPOUND_JOINER: char = '\u{200C}';

/// Punctuation stripper and whitespace collapser. Everything outside the
/// configured punctuation set and whitespace is preserved exactly.
#[derive(Debug, Clone)]
pub struct Normalizer {
    punctuation: BTreeSet<char>,
}

impl Default for Normalizer {
    /// ASCII punctuation plus the Urdu full stop, comma, and question mark.
    fn default() -> Self {
        let mut punctuation: BTreeSet<char> =
            (0u8..128).map(char::from).filter(char::is_ascii_punctuation).collect();
        punctuation.extend(['۔', '،', '؟']);
        Normalizer { punctuation }
    }
}

impl Normalizer {
    pub fn new(punctuation: BTreeSet<char>) -> Normalizer {
        Normalizer { punctuation }
    }

    /// Remove punctuation, collapse whitespace runs to single spaces, and
    /// strip leading/trailing space. Total: never fails.
    pub fn normalize(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut pending_space = false;
        for c in text.chars() {
            if self.punctuation.contains(&c) {
                continue;
            }
            if c.is_whitespace() {
                if !out.is_empty() {
                    pending_space = true;
                }
                continue;
            }
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
        out
    }
}

/// Multi-token entries to merge into single vocabulary items. Entries are
/// unique and prefix-free, which makes the greedy left-to-right merge
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct CompoundLexicon {
    entries: Vec<Vec<String>>,
}

impl CompoundLexicon {
    pub fn empty() -> CompoundLexicon {
        CompoundLexicon::default()
    }

    pub fn new(entries: Vec<Vec<String>>) -> Result<CompoundLexicon> {
        for entry in &entries {
            if entry.len() < 2 {
                return Err(CoreError::Contract(format!(
                    "lexicon entry {entry:?} must contain at least two tokens"
                )));
            }
            if entry.iter().any(|t| t.is_empty() || t.contains(' ')) {
                return Err(CoreError::Contract(format!(
                    "lexicon entry {entry:?} contains an empty or space-carrying token"
                )));
            }
        }
        for (i, a) in entries.iter().enumerate() {
            for (j, b) in entries.iter().enumerate() {
                if i == j {
                    continue;
                }
                if b.len() >= a.len() && &b[..a.len()] == a.as_slice() {
                    let kind = if a.len() == b.len() { "duplicates" } else { "is a prefix of" };
                    return Err(CoreError::Contract(format!(
                        "lexicon entry {a:?} {kind} {b:?}"
                    )));
                }
            }
        }
        Ok(CompoundLexicon { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &[String]> {
        self.entries.iter().map(|e| e.as_slice())
    }

    /// The single entry matching `tokens` at `pos`, if any. Prefix-freeness
    /// guarantees at most one.
    fn match_at(&self, tokens: &[String], pos: usize) -> Option<&[String]> {
        self.entries.iter().map(|e| e.as_slice()).find(|entry| {
            pos + entry.len() <= tokens.len() && tokens[pos..pos + entry.len()] == **entry
        })
    }
}

/// Split normalized text on spaces, then greedily merge lexicon compounds
/// into single tokens joined by [`COMPOUND_JOINER`].
pub fn tokenize(text: &str, lexicon: &CompoundLexicon) -> Vec<String> {
    let words: Vec<String> = text
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect();
    if lexicon.is_empty() {
        return words;
    }
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        if let Some(entry) = lexicon.match_at(&words, i) {
            let mut merged = String::new();
            for (k, part) in words[i..i + entry.len()].iter().enumerate() {
                if k > 0 {
                    merged.push(COMPOUND_JOINER);
                }
                merged.push_str(part);
            }
            out.push(merged);
            i += entry.len();
        } else {
            out.push(words[i].clone());
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(s: &str) -> String {
        Normalizer::default().normalize(s)
    }

    #[test]
    fn urdu_full_stop_is_removed() {
        assert_eq!(norm("a b۔"), "a b");
    }

    #[test]
    fn whitespace_runs_collapse() {
        assert_eq!(norm("  x   y  "), "x y");
        assert_eq!(norm("x\t\ny"), "x y");
    }

    #[test]
    fn empty_input_stays_empty() {
        assert_eq!(norm(""), "");
        assert_eq!(norm(" ۔، "), "");
    }

    #[test]
    fn urdu_marks_and_ascii_punctuation_go() {
        assert_eq!(norm("کیا؟ ہاں، ٹھیک!"), "کیا ہاں ٹھیک");
        assert_eq!(norm("a.b,c"), "abc");
    }

    #[test]
    fn other_codepoints_survive() {
        let s = "ایک\u{200C}دو tre3";
        assert_eq!(norm(s), s);
    }

    #[test]
    fn plain_split_without_lexicon() {
        let lex = CompoundLexicon::empty();
        assert_eq!(tokenize("w1 w2 w3", &lex), vec!["w1", "w2", "w3"]);
        assert_eq!(tokenize("", &lex), Vec::<String>::new());
    }

    #[test]
    fn greedy_merge_of_compound() {
        let lex = CompoundLexicon::new(vec![vec!["a".into(), "b".into()]]).unwrap();
        assert_eq!(tokenize("a b c", &lex), vec!["a\u{200C}b", "c"]);
        assert_eq!(tokenize("c a b", &lex), vec!["c", "a\u{200C}b"]);
        assert_eq!(tokenize("a c b", &lex), vec!["a", "c", "b"]);
    }

    #[test]
    fn reduplication_merges_repeatedly() {
        let lex = CompoundLexicon::new(vec![vec!["صبح".into(), "صبح".into()]]).unwrap();
        assert_eq!(
            tokenize("صبح صبح صبح صبح", &lex),
            vec!["صبح\u{200C}صبح", "صبح\u{200C}صبح"]
        );
    }

    #[test]
    fn lexicon_rejects_prefixes_duplicates_and_singletons() {
        assert!(CompoundLexicon::new(vec![vec!["a".into()]]).is_err());
        assert!(CompoundLexicon::new(vec![
            vec!["a".into(), "b".into()],
            vec!["a".into(), "b".into()],
        ])
        .is_err());
        assert!(CompoundLexicon::new(vec![
            vec!["a".into(), "b".into()],
            vec!["a".into(), "b".into(), "c".into()],
        ])
        .is_err());
        assert!(CompoundLexicon::new(vec![
            vec!["a".into(), "b".into()],
            vec!["b".into(), "a".into()],
        ])
        .is_ok());
    }
}
