//! Caption generation from a trained model: greedy and beam search, plus
//! per-word attention heatmap rendering.
//!
//! Both decoders start from the start marker and the feature-conditioned
//! initial hidden state, and stop at the end marker or the length cap.
//! Greedy takes the argmax at every step (ties go to the lowest id). Beam
//! search prunes expansions by cumulative log-probability, ranks finished
//! hypotheses by length-normalized log-probability, and breaks every tie by
//! lexicographic token-id order, so a beam of one reproduces greedy exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::{CaptionModel, FeatureGrid};
use crate::tape::{log_sum_exp, Tape};
use crate::tensor::Tensor;
use crate::vocab::{END, START};

/// A decoded caption with everything needed for reports and heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Token ids including the leading start marker and, unless the length
    /// cap intervened, the trailing end marker.
    pub ids: Vec<u32>,
    /// One attention-weight row per emitted token (end marker included).
    pub attention: Vec<Vec<f64>>,
    /// Log-probability of each emitted token.
    pub step_logprobs: Vec<f64>,
    /// Sum of the per-step log-probabilities.
    pub total_logprob: f64,
}

impl DecodeResult {
    /// Emitted-token count (the start marker does not count).
    pub fn emitted(&self) -> usize {
        self.step_logprobs.len()
    }

    /// Total log-probability divided by the emitted-token count.
    pub fn normalized_logprob(&self) -> f64 {
        self.total_logprob / self.emitted().max(1) as f64
    }
}

fn log_probs(logits: &Tensor) -> Vec<f64> {
    let d = logits.data();
    let lse = log_sum_exp(&d);
    d.iter().map(|&x| x - lse).collect()
}

/// Argmax with ties resolved to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding: argmax at every step, stop at the end marker or after
/// `max_len` emissions.
pub fn greedy_decode(
    model: &CaptionModel,
    features: &FeatureGrid,
    max_len: usize,
) -> Result<DecodeResult> {
    if max_len == 0 {
        return Err(CoreError::Contract("max_len must be at least 1".into()));
    }
    let tape = Tape::new();
    let grid = features.to_tensor();
    let mut hidden = model.init_hidden(&tape, &grid)?;
    let mut result = DecodeResult {
        ids: vec![START],
        attention: Vec::new(),
        step_logprobs: Vec::new(),
        total_logprob: 0.0,
    };
    let mut prev = START;
    for _ in 0..max_len {
        let step = model.decoder_step(&tape, prev, &hidden, &grid)?;
        let lp = log_probs(&step.logits);
        let chosen = argmax(&step.logits.data());
        result.ids.push(chosen as u32);
        result.attention.push(step.weights.to_vec());
        result.step_logprobs.push(lp[chosen]);
        result.total_logprob += lp[chosen];
        if chosen as u32 == END {
            break;
        }
        prev = chosen as u32;
        hidden = step.hidden;
    }
    Ok(result)
}

struct Hypothesis {
    /// Emitted ids (start marker excluded).
    ids: Vec<u32>,
    hidden: Tensor,
    attention: Vec<Vec<f64>>,
    step_logprobs: Vec<f64>,
    total_logprob: f64,
}

impl Hypothesis {
    fn into_result(self) -> DecodeResult {
        let mut ids = Vec::with_capacity(self.ids.len() + 1);
        ids.push(START);
        ids.extend_from_slice(&self.ids);
        DecodeResult {
            ids,
            attention: self.attention,
            step_logprobs: self.step_logprobs,
            total_logprob: self.total_logprob,
        }
    }
}

fn better_by(score_a: f64, ids_a: &[u32], score_b: f64, ids_b: &[u32]) -> core::cmp::Ordering {
    // Higher score first; ties go to the lexicographically smaller sequence.
    score_b
        .partial_cmp(&score_a)
        .unwrap_or(core::cmp::Ordering::Equal)
        .then_with(|| ids_a.cmp(ids_b))
}

/// Beam-search decoding.
///
/// Every live hypothesis expands over the full vocabulary; the pooled
/// candidates are pruned to `beam_width` by cumulative log-probability, and
/// pruned candidates that just emitted the end marker (or hit `max_len`) move
/// to the finished set. Finished hypotheses are ranked by length-normalized
/// log-probability with a lexicographic tie-break; the best one is returned.
pub fn beam_decode(
    model: &CaptionModel,
    features: &FeatureGrid,
    beam_width: usize,
    max_len: usize,
) -> Result<DecodeResult> {
    if beam_width == 0 {
        return Err(CoreError::Contract("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(CoreError::Contract("max_len must be at least 1".into()));
    }
    let tape = Tape::new();
    let grid = features.to_tensor();
    let vocab = model.dims.vocab_size as u32;

    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        hidden: model.init_hidden(&tape, &grid)?,
        attention: Vec::new(),
        step_logprobs: Vec::new(),
        total_logprob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        struct Candidate {
            parent: usize,
            token: u32,
            logprob: f64,
            total: f64,
            ids: Vec<u32>,
        }
        let mut pool: Vec<Candidate> = Vec::with_capacity(live.len() * vocab as usize);
        let mut steps: Vec<(Tensor, Vec<f64>)> = Vec::with_capacity(live.len());
        for (parent, hyp) in live.iter().enumerate() {
            let prev = hyp.ids.last().copied().unwrap_or(START);
            let step = model.decoder_step(&tape, prev, &hyp.hidden, &grid)?;
            let lp = log_probs(&step.logits);
            for token in 0..vocab {
                let logprob = lp[token as usize];
                let mut ids = hyp.ids.clone();
                ids.push(token);
                pool.push(Candidate {
                    parent,
                    token,
                    logprob,
                    total: hyp.total_logprob + logprob,
                    ids,
                });
            }
            steps.push((step.hidden, step.weights.to_vec()));
        }
        pool.sort_by(|a, b| better_by(a.total, &a.ids, b.total, &b.ids));
        pool.truncate(beam_width);

        let mut next_live = Vec::new();
        for cand in pool {
            let parent = &live[cand.parent];
            let (hidden, weights) = &steps[cand.parent];
            let mut attention = parent.attention.clone();
            attention.push(weights.clone());
            let mut step_logprobs = parent.step_logprobs.clone();
            step_logprobs.push(cand.logprob);
            let hyp = Hypothesis {
                ids: cand.ids,
                hidden: hidden.clone(),
                attention,
                step_logprobs,
                total_logprob: cand.total,
            };
            if cand.token == END || hyp.ids.len() >= max_len {
                finished.push(hyp);
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
    }

    // better_by orders best-first, so min_by returns the winner.
    let best = finished
        .into_iter()
        .min_by(|a, b| {
            better_by(
                a.total_logprob / a.ids.len() as f64,
                &a.ids,
                b.total_logprob / b.ids.len() as f64,
                &b.ids,
            )
        })
        .expect("at least one hypothesis finishes by the length cap");
    Ok(best.into_result())
}

/// Render one attention row as a binary PGM (P5, maxval 255) over a
/// `grid_side x grid_side` layout. Weights are scaled so the strongest cell
/// is white: `pixel = round(255*w / max(w))`.
pub fn render_attention_pgm(weights: &[f64], grid_side: usize) -> Result<Vec<u8>> {
    if grid_side == 0 || weights.len() != grid_side * grid_side {
        return Err(CoreError::Contract(format!(
            "{} attention weights do not fill a {grid_side}x{grid_side} grid",
            weights.len()
        )));
    }
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    out.extend_from_slice(format!("P5\n{grid_side} {grid_side}\n255\n").as_bytes());
    for &w in weights {
        let value = if max > 0.0 {
            libm::round(255.0 * w / max)
        } else {
            0.0
        };
        out.push(value.clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

/// Filename for one emitted step's heatmap.
pub fn attention_map_name(step: usize, word_id: u32) -> String {
    format!("step_{step}_{word_id}.pgm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            feature_dim: 2,
            embed_dim: 2,
            attn_dim: 2,
            hidden_dim: 3,
            vocab_size: vocab,
            patch_dim: 4,
        }
    }

    fn random_grid(rng: &mut ChaCha8Rng, regions: usize, dim: usize) -> FeatureGrid {
        let values = (0..regions * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureGrid::new(regions, dim, values).unwrap()
    }

    #[test]
    fn forced_end_marker_gives_empty_caption() {
        let model = CaptionModel::new(dims(6), 3).unwrap();
        let mut bias = vec![0.0; 6];
        bias[END as usize] = 50.0;
        model.out_bias.set_data(&bias).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grid = random_grid(&mut rng, 4, 2);
        let out = greedy_decode(&model, &grid, 10).unwrap();
        assert_eq!(out.ids, vec![START, END]);
        assert_eq!(out.emitted(), 1);
        assert_eq!(out.attention.len(), 1);
    }

    #[test]
    fn length_cap_truncates_without_end_marker() {
        let model = CaptionModel::new(dims(6), 3).unwrap();
        let mut bias = vec![0.0; 6];
        bias[4] = 50.0;
        model.out_bias.set_data(&bias).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grid = random_grid(&mut rng, 4, 2);
        let out = greedy_decode(&model, &grid, 1).unwrap();
        assert_eq!(out.ids, vec![START, 4]);
        assert!(!out.ids.contains(&END));
    }

    #[test]
    fn total_logprob_is_the_step_sum_and_weights_normalize() {
        let model = CaptionModel::new(dims(7), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = random_grid(&mut rng, 5, 2);
        let out = greedy_decode(&model, &grid, 8).unwrap();
        let sum: f64 = out.step_logprobs.iter().sum();
        assert!((sum - out.total_logprob).abs() < 1e-12);
        for row in &out.attention {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn beam_of_one_reproduces_greedy() {
        for seed in 0..25 {
            let model = CaptionModel::new(dims(6), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
            let grid = random_grid(&mut rng, 4, 2);
            let g = greedy_decode(&model, &grid, 6).unwrap();
            let b = beam_decode(&model, &grid, 1, 6).unwrap();
            assert_eq!(g.ids, b.ids, "seed {seed}");
            assert_eq!(g.step_logprobs, b.step_logprobs, "seed {seed}");
        }
    }

    /// Every stop-at-END-or-cap sequence, scored step by step.
    fn enumerate_all(
        model: &CaptionModel,
        grid: &FeatureGrid,
        max_len: usize,
    ) -> Vec<(Vec<u32>, f64)> {
        #[allow(clippy::too_many_arguments)]
        fn recurse(
            model: &CaptionModel,
            tape: &Tape,
            grid_t: &Tensor,
            hidden: &Tensor,
            prefix: &mut Vec<u32>,
            total: f64,
            max_len: usize,
            out: &mut Vec<(Vec<u32>, f64)>,
        ) {
            let prev = prefix.last().copied().unwrap_or(START);
            let step = model.decoder_step(tape, prev, hidden, grid_t).unwrap();
            let lp = log_probs(&step.logits);
            for token in 0..model.dims.vocab_size as u32 {
                prefix.push(token);
                let t = total + lp[token as usize];
                if token == END || prefix.len() >= max_len {
                    out.push((prefix.clone(), t / prefix.len() as f64));
                } else {
                    recurse(model, tape, grid_t, &step.hidden, prefix, t, max_len, out);
                }
                prefix.pop();
            }
        }
        let tape = Tape::new();
        let grid_t = grid.to_tensor();
        let hidden = model.init_hidden(&tape, &grid_t).unwrap();
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        recurse(model, &tape, &grid_t, &hidden, &mut prefix, 0.0, max_len, &mut out);
        out
    }

    #[test]
    fn exhaustive_beam_matches_brute_force() {
        for seed in [1u64, 7, 13, 29] {
            let vocab = 4;
            let max_len = 3;
            let model = CaptionModel::new(dims(vocab), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = random_grid(&mut rng, 3, 2);

            let mut all = enumerate_all(&model, &grid, max_len);
            all.sort_by(|a, b| better_by(a.1, &a.0, b.1, &b.0));
            let brute = &all[0];

            let width = vocab.pow(max_len as u32);
            let beam = beam_decode(&model, &grid, width, max_len).unwrap();
            assert_eq!(&beam.ids[1..], brute.0.as_slice(), "seed {seed}");
            assert!((beam.normalized_logprob() - brute.1).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_scores_pick_the_lexicographically_smaller_sequence() {
        // All-zero model: every token is equally likely at every step, so all
        // finished hypotheses tie on normalized log-probability and the
        // all-zeros id sequence wins.
        let model = CaptionModel::new(dims(5), 1).unwrap();
        for (_, t) in model.parameters() {
            let n = t.numel();
            t.set_data(&vec![0.0; n]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = random_grid(&mut rng, 4, 2);
        let beam = beam_decode(&model, &grid, 3, 3).unwrap();
        assert_eq!(beam.ids, vec![START, 0, 0, 0]);
        let greedy = greedy_decode(&model, &grid, 3).unwrap();
        assert_eq!(greedy.ids, beam.ids);
    }

    #[test]
    fn wider_beams_never_score_worse() {
        for seed in 0..15u64 {
            let model = CaptionModel::new(dims(4), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
            let grid = random_grid(&mut rng, 4, 2);
            let mut prev = f64::NEG_INFINITY;
            for width in [1usize, 2, 4, 8, 64] {
                let out = beam_decode(&model, &grid, width, 3).unwrap();
                let score = out.normalized_logprob();
                assert!(
                    score >= prev - 1e-12,
                    "seed {seed} width {width}: {score} < {prev}"
                );
                prev = score;
            }
        }
    }

    #[test]
    fn pgm_rendering_rules() {
        // One-hot: a single white cell.
        let bytes = render_attention_pgm(&[0.0, 1.0, 0.0, 0.0], 2).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 0, 0]);

        // Uniform: everything saturates to 255.
        let bytes = render_attention_pgm(&[0.25; 4], 2).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[255, 255, 255, 255]);

        // Max-normalized rounding.
        let bytes = render_attention_pgm(&[0.5, 0.25, 0.125, 0.125], 2).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[255, 128, 64, 64]);

        assert!(render_attention_pgm(&[0.5; 3], 2).is_err());
        assert_eq!(attention_map_name(2, 7), "step_2_7.pgm");
    }
}
