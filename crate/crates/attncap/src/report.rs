//! Operator-facing outputs: decoded captions as JSON lines, the evaluation
//! report as JSON, and the training log as CSV.

use std::fs;
use std::path::Path;

use attncap_core::bleu::BleuReport;
use serde::Serialize;

use crate::error::CliError;

/// One decoded image, as a line of `captions.jsonl`.
#[derive(Debug, Clone, Serialize)]
pub struct CaptionLine {
    pub image_id: String,
    pub caption: String,
    pub logprob: f64,
}

pub fn render_captions_jsonl(lines: &[CaptionLine]) -> Result<String, CliError> {
    let mut out = String::new();
    for line in lines {
        let json = serde_json::to_string(line)
            .map_err(|e| CliError::data(format!("caption serialization: {e}")))?;
        out.push_str(&json);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_captions_jsonl(path: &Path, lines: &[CaptionLine]) -> Result<(), CliError> {
    fs::write(path, render_captions_jsonl(lines)?)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct PerImageReport {
    pub image_id: String,
    pub caption: String,
    pub bleu: f64,
}

#[derive(Debug, Clone, Serialize)]
struct BleuJson {
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    bp: f64,
    score: f64,
}

#[derive(Debug, Clone, Serialize)]
struct EvalJson<'a> {
    bleu: BleuJson,
    per_image: &'a [PerImageReport],
}

/// The evaluation report: corpus BLEU-4 breakdown plus per-image details.
pub fn render_eval_report(
    corpus: &BleuReport,
    per_image: &[PerImageReport],
) -> Result<String, CliError> {
    let p = |i: usize| corpus.precisions.get(i).copied().unwrap_or(0.0);
    let report = EvalJson {
        bleu: BleuJson {
            p1: p(0),
            p2: p(1),
            p3: p(2),
            p4: p(3),
            bp: corpus.brevity_penalty,
            score: corpus.score,
        },
        per_image,
    };
    serde_json::to_string_pretty(&report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::data(format!("report serialization: {e}")))
}

pub fn write_eval_report(
    path: &Path,
    corpus: &BleuReport,
    per_image: &[PerImageReport],
) -> Result<(), CliError> {
    fs::write(path, render_eval_report(corpus, per_image)?)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Training log rows as `epoch,mean_loss,seconds`.
pub fn render_train_log(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("epoch,mean_loss,seconds\n");
    for &(epoch, loss, seconds) in rows {
        out.push_str(&format!("{epoch},{loss},{seconds:.3}\n"));
    }
    out
}

pub fn write_train_log(path: &Path, rows: &[(usize, f64, f64)]) -> Result<(), CliError> {
    fs::write(path, render_train_log(rows))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
