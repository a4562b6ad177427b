//! The bundled synthetic dataset: ten deterministic feature grids paired with
//! ten short Urdu captions, plus a two-entry compound lexicon. Everything is
//! derived from fixed seeds so the committed files under `data/toy/` can be
//! regenerated bit for bit, and tests can materialize a private copy anywhere.

use std::fs;
use std::path::Path;

use attncap_core::model::FeatureGrid;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::fgrd;
use crate::textdata::CaptionRecord;

pub const TOY_REGIONS: usize = 16;
pub const TOY_FEATURE_DIM: usize = 32;
const TOY_GRID_SEED: u64 = 0x70_59;

/// The ten captions, one per image, in image order.
pub const TOY_CAPTIONS: [&str; 10] = [
    "ایک آدمی پانی میں چھلانگ لگا رہا ہے",
    "ایک آدمی صبح صبح دوڑ رہا ہے",
    "دو آدمی سڑک پر چل رہے ہیں",
    "ایک آدمی گھوڑے پر سوار ہے",
    "ایک آدمی کتاب پڑھ رہا ہے",
    "وزیر اعظم تقریر کر رہے ہیں",
    "ایک آدمی پہاڑ پر چڑھ رہا ہے",
    "ایک بوڑھا آدمی بینچ پر بیٹھا ہے",
    "ایک آدمی سائیکل چلا رہا ہے",
    "ایک آدمی بازار میں پھل بیچ رہا ہے",
];

/// Multi-word expressions the toy captions use: a reduplication and a
/// compound title.
pub const TOY_LEXICON: [&str; 2] = ["صبح صبح", "وزیر اعظم"];

pub fn toy_image_id(index: usize) -> String {
    format!("img{index:02}")
}

/// Deterministic feature grid for one toy image: uniform(−1, 1) values from
/// a per-image stream.
pub fn toy_feature_grid(index: usize) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(TOY_GRID_SEED);
    rng.set_stream(index as u64);
    let values: Vec<f64> = (0..TOY_REGIONS * TOY_FEATURE_DIM)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeatureGrid::new(TOY_REGIONS, TOY_FEATURE_DIM, values).expect("static shape")
}

pub fn toy_caption_records() -> Vec<CaptionRecord> {
    TOY_CAPTIONS
        .iter()
        .enumerate()
        .map(|(i, text)| CaptionRecord {
            image_id: toy_image_id(i),
            index: 0,
            text: (*text).to_string(),
        })
        .collect()
}

pub fn render_caption_file() -> String {
    let mut out = String::new();
    for record in toy_caption_records() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            record.image_id, record.index, record.text
        ));
    }
    out
}

pub fn render_lexicon_file() -> String {
    let mut out = String::new();
    for entry in TOY_LEXICON {
        out.push_str(entry);
        out.push('\n');
    }
    out
}

/// Labeled sentences for the grammar classifier, in the caption file format
/// with the label in the index column. Acceptable sentences are the toy
/// captions (all verb-final); unacceptable ones drop the final verb, so the
/// set is cleanly separable.
pub fn render_grammar_file() -> String {
    let mut out = String::new();
    for (i, text) in TOY_CAPTIONS.iter().enumerate() {
        out.push_str(&format!("s{i:02}\t1\t{text}\n"));
    }
    for (i, text) in TOY_CAPTIONS.iter().enumerate() {
        let words: Vec<&str> = text.split(' ').collect();
        let broken = words[..words.len() - 1].join(" ");
        out.push_str(&format!("s{:02}\t0\t{broken}\n", i + TOY_CAPTIONS.len()));
    }
    out
}

/// Materialize the whole dataset under `dir`: `captions.tsv`, `lexicon.txt`,
/// and `features/img##.fgrd`.
pub fn write_toy_dataset(dir: &Path) -> Result<(), CliError> {
    let features = dir.join("features");
    fs::create_dir_all(&features)
        .map_err(|e| CliError::data(format!("{}: {e}", features.display())))?;
    fs::write(dir.join("captions.tsv"), render_caption_file())
        .map_err(|e| CliError::data(e.to_string()))?;
    fs::write(dir.join("lexicon.txt"), render_lexicon_file())
        .map_err(|e| CliError::data(e.to_string()))?;
    fs::write(dir.join("grammar.tsv"), render_grammar_file())
        .map_err(|e| CliError::data(e.to_string()))?;
    for i in 0..TOY_CAPTIONS.len() {
        let grid = toy_feature_grid(i);
        fgrd::write(&features.join(format!("{}.fgrd", toy_image_id(i))), &grid)?;
    }
    Ok(())
}
