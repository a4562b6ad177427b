//! Text file formats: caption files, compound lexicons, and vocabulary files.
//!
//! Caption file: UTF-8, one record per line, `image_id<TAB>index<TAB>text`.
//! Lexicon file: UTF-8, one compound per line, tokens separated by spaces.
//! Vocabulary file: UTF-8, `id<TAB>word<TAB>frequency` with ids contiguous
//! from 0 (the four reserved rows first).

use std::fs;
use std::path::Path;

use attncap_core::text::CompoundLexicon;
use attncap_core::vocab::{Vocabulary, RESERVED};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub index: u32,
    pub text: String,
}

pub fn parse_captions(content: &str, path: &Path) -> Result<Vec<CaptionRecord>, CliError> {
    let mut records = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (id, index, text) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(CliError::data(format!(
                    "{}:{}: expected image_id<TAB>index<TAB>caption",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let index: u32 = index.parse().map_err(|_| {
            CliError::data(format!(
                "{}:{}: caption index {index:?} is not a number",
                path.display(),
                lineno + 1
            ))
        })?;
        if id.is_empty() {
            return Err(CliError::data(format!(
                "{}:{}: empty image id",
                path.display(),
                lineno + 1
            )));
        }
        records.push(CaptionRecord {
            image_id: id.to_string(),
            index,
            text: text.to_string(),
        });
    }
    Ok(records)
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>, CliError> {
    let content =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let records = parse_captions(&content, path)?;
    if records.is_empty() {
        return Err(CliError::data(format!(
            "{}: caption file holds no records",
            path.display()
        )));
    }
    Ok(records)
}

pub fn read_lexicon(path: &Path) -> Result<CompoundLexicon, CliError> {
    let content =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let entries: Vec<Vec<String>> = content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(' ').filter(|t| !t.is_empty()).map(String::from).collect())
        .collect();
    CompoundLexicon::new(entries)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn render_vocab(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (id, word, freq) in vocab.entries() {
        out.push_str(&format!("{id}\t{word}\t{freq}\n"));
    }
    out
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), CliError> {
    fs::write(path, render_vocab(vocab))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let content =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| {
            CliError::data(format!("{}:{}: {msg}", path.display(), lineno + 1))
        };
        let mut parts = line.splitn(3, '\t');
        let (id, word, freq) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(bad("expected id<TAB>word<TAB>frequency")),
        };
        let id: usize = id.parse().map_err(|_| bad("id is not a number"))?;
        let freq: u64 = freq.parse().map_err(|_| bad("frequency is not a number"))?;
        if id != entries.len() {
            return Err(bad(&format!("ids must be contiguous from 0, got {id}")));
        }
        if id < RESERVED.len() {
            if word != RESERVED[id] {
                return Err(bad(&format!(
                    "reserved id {id} must be {:?}, got {word:?}",
                    RESERVED[id]
                )));
            }
            entries.push(None);
        } else {
            entries.push(Some((word.to_string(), freq)));
        }
    }
    if entries.len() < RESERVED.len() {
        return Err(CliError::data(format!(
            "{}: vocabulary file is missing the reserved rows",
            path.display()
        )));
    }
    let surface: Vec<(String, u64)> = entries.into_iter().flatten().collect();
    Vocabulary::from_entries(surface, 1)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
