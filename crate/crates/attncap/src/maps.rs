//! Attention heatmap emission: one PGM per decoded step.

use std::fs;
use std::path::{Path, PathBuf};

use attncap_core::decode::{attention_map_name, render_attention_pgm, DecodeResult};

use crate::error::CliError;

/// Write `step_<k>_<word-id>.pgm` for every emitted token of `result` into
/// `dir`, over a `grid_side × grid_side` layout. Returns the paths written.
pub fn emit_attention_maps(
    result: &DecodeResult,
    grid_side: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::with_capacity(result.attention.len());
    for (step, weights) in result.attention.iter().enumerate() {
        let bytes = render_attention_pgm(weights, grid_side)?;
        let word_id = result.ids[step + 1]; // ids[0] is the start marker
        let path = dir.join(attention_map_name(step, word_id));
        fs::write(&path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_file_per_emitted_token() {
        let result = DecodeResult {
            ids: vec![1, 4, 2],
            attention: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.25; 4]],
            step_logprobs: vec![-0.1, -0.2],
            total_logprob: -0.3,
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_attention_maps(&result, 2, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("step_0_4.pgm"));
        assert!(paths[1].ends_with("step_1_2.pgm"));
        let bytes = std::fs::read(&paths[0]).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));

        // Non-square region counts cannot be drawn.
        let bad = DecodeResult {
            ids: vec![1, 2],
            attention: vec![vec![0.5, 0.5, 0.0]],
            step_logprobs: vec![-0.1],
            total_logprob: -0.1,
        };
        assert!(emit_attention_maps(&bad, 2, dir.path()).is_err());
    }
}
