//! BLEU scoring: clipped n-gram precision, brevity penalty, sentence and
//! corpus aggregation over multiple references.
//!
//! Cumulative BLEU with uniform weights and no smoothing: any zero n-gram
//! precision zeroes the whole score. The effective reference length is the
//! one closest to the candidate length, shorter on ties.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Per-order precisions plus the pieces the final score is assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Clipped precisions p1..p_max_n.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// Total candidate length c.
    pub candidate_len: usize,
    /// Effective reference length r (closest to c per pair, summed).
    pub reference_len: usize,
    /// Final score in [0, 1].
    pub score: f64,
}

/// Clipped n-gram counts of `candidate` against `references` for one order:
/// `(matched, total)` where each candidate n-gram's count is capped by its
/// maximum count in any single reference.
pub fn clipped_counts(
    candidate: &[String],
    references: &[Vec<String>],
    n: usize,
) -> (u64, u64) {
    if n == 0 || candidate.len() < n {
        return (0, 0);
    }
    let mut cand_counts: BTreeMap<&[String], u64> = BTreeMap::new();
    for gram in candidate.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let mut max_ref: BTreeMap<&[String], u64> = BTreeMap::new();
    for reference in references {
        if reference.len() < n {
            continue;
        }
        let mut counts: BTreeMap<&[String], u64> = BTreeMap::new();
        for gram in reference.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
        for (gram, count) in counts {
            let slot = max_ref.entry(gram).or_insert(0);
            *slot = (*slot).max(count);
        }
    }
    let matched = cand_counts
        .iter()
        .map(|(gram, &count)| count.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, (candidate.len() - n + 1) as u64)
}

/// Reference length closest to the candidate length; ties go to the shorter.
fn effective_reference_len(candidate_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(candidate_len), len))
        .expect("references are nonempty")
}

#[derive(Debug, Default)]
struct Accumulator {
    matched: Vec<u64>,
    total: Vec<u64>,
    candidate_len: usize,
    reference_len: usize,
}

impl Accumulator {
    fn new(max_n: usize) -> Accumulator {
        Accumulator {
            matched: vec![0; max_n],
            total: vec![0; max_n],
            candidate_len: 0,
            reference_len: 0,
        }
    }

    fn add(&mut self, candidate: &[String], references: &[Vec<String>]) -> Result<()> {
        if references.is_empty() || references.iter().any(|r| r.is_empty()) {
            return Err(CoreError::Contract(
                "bleu needs at least one nonempty reference per candidate".into(),
            ));
        }
        self.candidate_len += candidate.len();
        self.reference_len += effective_reference_len(candidate.len(), references);
        for n in 1..=self.matched.len() {
            let (m, t) = clipped_counts(candidate, references, n);
            self.matched[n - 1] += m;
            self.total[n - 1] += t;
        }
        Ok(())
    }

    fn finish(&self, weights: Option<&[f64]>) -> Result<BleuReport> {
        let max_n = self.matched.len();
        let uniform = vec![1.0 / max_n as f64; max_n];
        let weights = match weights {
            Some(w) => {
                if w.len() != max_n {
                    return Err(CoreError::Config(format!(
                        "{} weights supplied for max_n = {max_n}",
                        w.len()
                    )));
                }
                if w.iter().any(|&x| x.is_nan() || x < 0.0) {
                    return Err(CoreError::Config(
                        "bleu weights must be nonnegative".into(),
                    ));
                }
                w
            }
            None => &uniform,
        };
        let precisions: Vec<f64> = self
            .matched
            .iter()
            .zip(&self.total)
            .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
            .collect();
        let (c, r) = (self.candidate_len, self.reference_len);
        let brevity_penalty = if c == 0 {
            0.0
        } else if c > r {
            1.0
        } else {
            libm::exp(1.0 - r as f64 / c as f64)
        };
        let score = if precisions.contains(&0.0) {
            0.0
        } else {
            let log_mean: f64 = precisions
                .iter()
                .zip(weights)
                .map(|(&p, &w)| w * libm::log(p))
                .sum();
            brevity_penalty * libm::exp(log_mean)
        };
        Ok(BleuReport {
            precisions,
            brevity_penalty,
            candidate_len: c,
            reference_len: r,
            score,
        })
    }
}

fn check_max_n(max_n: usize) -> Result<()> {
    if max_n == 0 {
        return Err(CoreError::Config("max_n must be at least 1".into()));
    }
    Ok(())
}

/// BLEU of one candidate against its references. An empty candidate is not an
/// error: it reports score 0 with `candidate_len == 0`.
pub fn sentence_bleu(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
    weights: Option<&[f64]>,
) -> Result<BleuReport> {
    check_max_n(max_n)?;
    let mut acc = Accumulator::new(max_n);
    acc.add(candidate, references)?;
    acc.finish(weights)
}

/// Corpus BLEU: n-gram counts and lengths are accumulated over all pairs
/// before any ratio is taken.
pub fn corpus_bleu(
    pairs: &[(Vec<String>, Vec<Vec<String>>)],
    max_n: usize,
    weights: Option<&[f64]>,
) -> Result<BleuReport> {
    check_max_n(max_n)?;
    if pairs.is_empty() {
        return Err(CoreError::Contract("corpus bleu over an empty corpus".into()));
    }
    let mut acc = Accumulator::new(max_n);
    for (candidate, references) in pairs {
        acc.add(candidate, references)?;
    }
    acc.finish(weights)
}
