//! Grammar-acceptability classifier: embedding, GRU over the sentence, and a
//! sigmoid read-out from the final hidden state.
//!
//! Shares the GRU cell and optimizer machinery with the caption model.
//! Training and scoring operate on encoded id sequences; the caller maps
//! surface tokens through a vocabulary first.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::model::{gru_step, uniform_param, GruCell};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{
    clip_gradients, epoch_rng, optimizer_step, shuffle, OptimizerState, TrainingConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrammarDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

/// Binary acceptability model. Output is always strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct GrammarClassifier {
    pub dims: GrammarDims,
    /// Word embeddings: `[V, E]`.
    pub embedding: Tensor,
    /// Recurrent cell over embedded tokens (input size E).
    pub gru: GruCell,
    /// Final affine read-out: weight `[H]`, bias `[1]`.
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

impl GrammarClassifier {
    pub fn new(dims: GrammarDims, seed: u64) -> Result<GrammarClassifier> {
        if dims.vocab_size == 0 || dims.embed_dim == 0 || dims.hidden_dim == 0 {
            return Err(CoreError::Config(
                "grammar classifier dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        Ok(GrammarClassifier {
            dims,
            embedding: uniform_param(&[dims.vocab_size, dims.embed_dim], rng),
            gru: GruCell::init(dims.embed_dim, dims.hidden_dim, rng),
            out_weight: uniform_param(&[dims.hidden_dim], rng),
            out_bias: Tensor::param_zeros(vec![1]),
        })
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(12);
        out.push(("embedding".into(), self.embedding.clone()));
        self.gru.parameters("gru", &mut out);
        out.push(("out_weight".into(), self.out_weight.clone()));
        out.push(("out_bias".into(), self.out_bias.clone()));
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.parameters() {
            t.zero_grad();
        }
    }

    /// Raw (pre-sigmoid) score of a sentence, on the given tape.
    fn raw_score(&self, tape: &Tape, sentence: &[u32]) -> Result<Tensor> {
        if sentence.is_empty() {
            return Err(CoreError::Contract(
                "grammar score of an empty sentence".into(),
            ));
        }
        let mut hidden = Tensor::zeros(vec![self.dims.hidden_dim]);
        for &id in sentence {
            if id as usize >= self.dims.vocab_size {
                return Err(CoreError::Contract(format!(
                    "id {id} out of range for vocabulary of {}",
                    self.dims.vocab_size
                )));
            }
            let embedded = tape.row(&self.embedding, id as usize)?;
            hidden = gru_step(tape, &self.gru, &embedded, &hidden)?;
        }
        let dot = tape.sum(&tape.mul(&self.out_weight, &hidden)?);
        tape.add(&dot, &self.out_bias)
    }

    /// Acceptability probability in (0, 1): the sigmoid of the final hidden
    /// state's affine projection.
    pub fn score(&self, sentence: &[u32]) -> Result<f64> {
        let tape = Tape::new();
        let raw = self.raw_score(&tape, sentence)?;
        let prob = tape.sigmoid(&raw).item()?;
        Ok(prob)
    }

    /// Fraction of examples whose thresholded score (at 0.5) matches the label.
    pub fn accuracy(&self, dataset: &[(Vec<u32>, bool)]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(CoreError::Contract("accuracy over an empty dataset".into()));
        }
        let mut correct = 0usize;
        for (sentence, label) in dataset {
            if (self.score(sentence)? > 0.5) == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

/// Train a classifier with binary cross-entropy and the shared optimizer
/// machinery. Deterministic given the seeds; both labels must be present.
/// Returns the classifier and the per-epoch mean loss; the observer runs
/// after each epoch with `(epoch, mean_loss)`.
pub fn grammar_train(
    dataset: &[(Vec<u32>, bool)],
    dims: GrammarDims,
    cfg: &TrainingConfig,
    init_seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(GrammarClassifier, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Contract("grammar dataset is empty".into()));
    }
    if dataset.iter().all(|(_, l)| *l) || dataset.iter().all(|(_, l)| !*l) {
        return Err(CoreError::Contract(
            "grammar dataset must contain both labels".into(),
        ));
    }
    if dataset.iter().any(|(s, _)| s.is_empty()) {
        return Err(CoreError::Contract(
            "grammar dataset contains an empty sentence".into(),
        ));
    }

    let clf = GrammarClassifier::new(dims, init_seed)?;
    let params = clf.param_tensors();
    let mut state = OptimizerState::new(&params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = epoch_rng(cfg.seed, epoch);
        shuffle(&mut order, &mut rng);

        let mut sample_losses = vec![0.0; dataset.len()];
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let mut batch_sum: Option<Tensor> = None;
            for &i in batch {
                let (sentence, label) = &dataset[i];
                let raw = clf.raw_score(&tape, sentence)?;
                // Binary cross-entropy through the stable two-class softmax:
                // softmax([s, 0])[0] is exactly sigmoid(s).
                let pair = tape.concat(&raw, &Tensor::scalar(0.0))?;
                let loss = tape.cross_entropy_logits(&pair, if *label { 0 } else { 1 })?;
                sample_losses[i] = loss.item()?;
                batch_sum = Some(match batch_sum {
                    Some(acc) => tape.add(&acc, &loss)?,
                    None => loss,
                });
            }
            let loss = tape.affine(
                &batch_sum.expect("batch is nonempty"),
                1.0 / batch.len() as f64,
                0.0,
            );
            if !loss.item()?.is_finite() {
                return Err(CoreError::Domain {
                    op: "grammar_train",
                    detail: format!("non-finite loss at epoch {epoch}"),
                });
            }
            clf.zero_grads();
            tape.backward(&loss)?;
            clip_gradients(&params, cfg.clip_norm)?;
            optimizer_step(&params, &mut state, cfg)?;
        }
        let mean = sample_losses.iter().sum::<f64>() / dataset.len() as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((clf, epoch_losses))
}
