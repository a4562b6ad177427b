//! The caption model: feature-grid encoder, additive soft attention, and a
//! GRU decoder producing next-word logits.
//!
//! The encoder output is an `L×D` grid of region features. At every decoding
//! step the previous hidden state is scored against each region
//! (`score[l] = w_score · tanh(w_dec·h + w_enc·x_l)`), the scores pass through
//! a softmax, and the weighted sum of the feature rows becomes the context
//! vector. The context is concatenated with the previous word's embedding and
//! fed to the GRU; the new hidden state projects to vocabulary logits.
//!
//! Attention is computed from the hidden state *before* the GRU update, so
//! the weighted context rides along with the current input.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Half-width of the uniform parameter initialization interval.
const INIT_RANGE: f64 = 0.08;

/// Region features for one image: `regions × dim`, row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    regions: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(regions: usize, dim: usize, values: Vec<f64>) -> Result<FeatureGrid> {
        if regions == 0 || dim == 0 {
            return Err(CoreError::Contract(format!(
                "feature grid needs positive dimensions, got {regions}x{dim}"
            )));
        }
        if values.len() != regions * dim {
            return Err(CoreError::Contract(format!(
                "feature grid {regions}x{dim} needs {} values, got {}",
                regions * dim,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::Contract(format!(
                "feature grid contains non-finite value {bad}"
            )));
        }
        Ok(FeatureGrid {
            regions,
            dim,
            values,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.dim..(l + 1) * self.dim]
    }

    /// Constant graph leaf of shape `[regions, dim]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(alloc::vec![self.regions, self.dim], self.values.clone())
            .expect("validated at construction")
    }
}

/// Additive attention parameters.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// Projects one feature row into attention space: `[feature_dim, attn_dim]`.
    pub w_enc: Tensor,
    /// Projects the decoder hidden state into attention space: `[attn_dim, hidden_dim]`.
    pub w_dec: Tensor,
    /// Scoring vector collapsing attention space to one score: `[attn_dim]`.
    pub w_score: Tensor,
}

/// GRU gate parameters for input size `I` and hidden size `H`. Update gate
/// `z`, reset gate `r`, candidate state `h̃`; the new state is
/// `(1−z)∘h + z∘h̃`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_update: Tensor, // [H, I]
    pub u_update: Tensor, // [H, H]
    pub b_update: Tensor, // [H]
    pub w_reset: Tensor,
    pub u_reset: Tensor,
    pub b_reset: Tensor,
    pub w_cand: Tensor,
    pub u_cand: Tensor,
    pub b_cand: Tensor,
}

impl GruCell {
    /// Fresh cell with uniform(−0.08, 0.08) weights and zero biases drawn
    /// from `rng` in field order.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> GruCell {
        let w = |rng: &mut ChaCha8Rng| uniform_param(&[hidden_dim, input_dim], rng);
        let u = |rng: &mut ChaCha8Rng| uniform_param(&[hidden_dim, hidden_dim], rng);
        GruCell {
            w_update: w(rng),
            u_update: u(rng),
            b_update: Tensor::param_zeros(alloc::vec![hidden_dim]),
            w_reset: w(rng),
            u_reset: u(rng),
            b_reset: Tensor::param_zeros(alloc::vec![hidden_dim]),
            w_cand: w(rng),
            u_cand: u(rng),
            b_cand: Tensor::param_zeros(alloc::vec![hidden_dim]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_update.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_update.cols()
    }

    pub(crate) fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w_update"), self.w_update.clone()));
        out.push((format!("{prefix}.u_update"), self.u_update.clone()));
        out.push((format!("{prefix}.b_update"), self.b_update.clone()));
        out.push((format!("{prefix}.w_reset"), self.w_reset.clone()));
        out.push((format!("{prefix}.u_reset"), self.u_reset.clone()));
        out.push((format!("{prefix}.b_reset"), self.b_reset.clone()));
        out.push((format!("{prefix}.w_cand"), self.w_cand.clone()));
        out.push((format!("{prefix}.u_cand"), self.u_cand.clone()));
        out.push((format!("{prefix}.b_cand"), self.b_cand.clone()));
    }
}

pub(crate) fn uniform_param(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Tensor::param(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Model dimensions. The region count is a property of the input grid, not of
/// the parameters, so it does not appear here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Feature dimension of each encoder region (D).
    pub feature_dim: usize,
    /// Word embedding dimension (E).
    pub embed_dim: usize,
    /// Attention space dimension (A).
    pub attn_dim: usize,
    /// Decoder hidden dimension (H).
    pub hidden_dim: usize,
    /// Vocabulary size (V).
    pub vocab_size: usize,
    /// Flattened pixels per patch for the raw-pixel encoder (P).
    pub patch_dim: usize,
}

/// Full caption generator: patch encoder, embedding, attention, GRU, output
/// projection, and the hidden-state initializer.
#[derive(Debug, Clone)]
pub struct CaptionModel {
    pub dims: ModelDims,
    /// Linear projection of a flattened patch to a feature row: `[P, D]`.
    pub patch_proj: Tensor,
    /// Word embeddings: `[V, E]`.
    pub embedding: Tensor,
    pub attention: AttentionParams,
    /// Decoder cell over `[embedding ++ context]` inputs (size E+D).
    pub gru: GruCell,
    /// Output projection to logits: `[V, H]` plus bias `[V]`.
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    /// Hidden-state initializer from the mean feature row: `[H, D]` plus bias `[H]`.
    pub init_weight: Tensor,
    pub init_bias: Tensor,
}

/// One decoder step's outputs.
pub struct StepOutput {
    /// Unnormalized next-word scores, `[V]`.
    pub logits: Tensor,
    /// Updated hidden state, `[H]`.
    pub hidden: Tensor,
    /// Attention weights used for the context, `[L]`.
    pub weights: Tensor,
}

impl CaptionModel {
    /// Seeded construction; identical seeds and dims give identical
    /// parameters. Weights are uniform(−0.08, 0.08), biases zero.
    pub fn new(dims: ModelDims, seed: u64) -> Result<CaptionModel> {
        for (name, v) in [
            ("feature_dim", dims.feature_dim),
            ("embed_dim", dims.embed_dim),
            ("attn_dim", dims.attn_dim),
            ("hidden_dim", dims.hidden_dim),
            ("vocab_size", dims.vocab_size),
            ("patch_dim", dims.patch_dim),
        ] {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be positive")));
            }
        }
        if dims.vocab_size <= crate::vocab::UNK as usize {
            return Err(CoreError::Config(format!(
                "vocab_size {} leaves no room for the reserved ids",
                dims.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        Ok(CaptionModel {
            dims,
            patch_proj: uniform_param(&[dims.patch_dim, dims.feature_dim], rng),
            embedding: uniform_param(&[dims.vocab_size, dims.embed_dim], rng),
            attention: AttentionParams {
                w_enc: uniform_param(&[dims.feature_dim, dims.attn_dim], rng),
                w_dec: uniform_param(&[dims.attn_dim, dims.hidden_dim], rng),
                w_score: uniform_param(&[dims.attn_dim], rng),
            },
            gru: GruCell::init(dims.embed_dim + dims.feature_dim, dims.hidden_dim, rng),
            out_weight: uniform_param(&[dims.vocab_size, dims.hidden_dim], rng),
            out_bias: Tensor::param_zeros(alloc::vec![dims.vocab_size]),
            init_weight: uniform_param(&[dims.hidden_dim, dims.feature_dim], rng),
            init_bias: Tensor::param_zeros(alloc::vec![dims.hidden_dim]),
        })
    }

    /// Learnable tensors with stable names, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(18);
        out.push(("patch_proj".into(), self.patch_proj.clone()));
        out.push(("embedding".into(), self.embedding.clone()));
        out.push(("attention.w_enc".into(), self.attention.w_enc.clone()));
        out.push(("attention.w_dec".into(), self.attention.w_dec.clone()));
        out.push(("attention.w_score".into(), self.attention.w_score.clone()));
        self.gru.parameters("gru", &mut out);
        out.push(("out_weight".into(), self.out_weight.clone()));
        out.push(("out_bias".into(), self.out_bias.clone()));
        out.push(("init_weight".into(), self.init_weight.clone()));
        out.push(("init_bias".into(), self.init_bias.clone()));
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

    /// Encode a raw single-channel image into the feature grid by slicing it
    /// into a `grid_side × grid_side` patch grid (row-major), flattening each
    /// patch row-major, and projecting through `patch_proj`.
    pub fn encode_pixels(
        &self,
        tape: &Tape,
        pixels: &[f64],
        width: usize,
        height: usize,
        grid_side: usize,
    ) -> Result<Tensor> {
        if grid_side == 0 || !width.is_multiple_of(grid_side) || !height.is_multiple_of(grid_side) {
            return Err(CoreError::Contract(format!(
                "image {width}x{height} is not divisible into a {grid_side}x{grid_side} patch grid"
            )));
        }
        if pixels.len() != width * height {
            return Err(CoreError::Contract(format!(
                "expected {} pixels for a {width}x{height} image, got {}",
                width * height,
                pixels.len()
            )));
        }
        let (pw, ph) = (width / grid_side, height / grid_side);
        if pw * ph != self.dims.patch_dim {
            return Err(CoreError::Contract(format!(
                "patch of {pw}x{ph} pixels does not match the model's patch_dim {}",
                self.dims.patch_dim
            )));
        }
        let regions = grid_side * grid_side;
        let mut patches = Vec::with_capacity(regions * self.dims.patch_dim);
        for gy in 0..grid_side {
            for gx in 0..grid_side {
                for py in 0..ph {
                    for px in 0..pw {
                        patches.push(pixels[(gy * ph + py) * width + gx * pw + px]);
                    }
                }
            }
        }
        let patches = Tensor::from_vec(alloc::vec![regions, self.dims.patch_dim], patches)?;
        tape.matmul(&patches, &self.patch_proj)
    }

    /// Initial hidden state: `tanh(init_weight · mean_row(features) + init_bias)`.
    pub fn init_hidden(&self, tape: &Tape, features: &Tensor) -> Result<Tensor> {
        let mean = tape.mean_rows(features)?;
        let projected = tape.matvec(&self.init_weight, &mean)?;
        let shifted = tape.add(&projected, &self.init_bias)?;
        Ok(tape.tanh(&shifted))
    }

    /// One decoding step: embed the previous word, attend over the feature
    /// grid with the current hidden state, run the GRU on the concatenated
    /// input, and project to logits.
    pub fn decoder_step(
        &self,
        tape: &Tape,
        prev_word: u32,
        hidden: &Tensor,
        features: &Tensor,
    ) -> Result<StepOutput> {
        if prev_word as usize >= self.dims.vocab_size {
            return Err(CoreError::Contract(format!(
                "word id {prev_word} out of range for vocabulary of {}",
                self.dims.vocab_size
            )));
        }
        let embedded = tape.row(&self.embedding, prev_word as usize)?;
        let scores = alignment_scores(tape, hidden, features, &self.attention)?;
        let weights = attention_weights(tape, &scores)?;
        let context = context_vector(tape, &weights, features)?;
        let input = tape.concat(&embedded, &context)?;
        let next_hidden = gru_step(tape, &self.gru, &input, hidden)?;
        let projected = tape.matvec(&self.out_weight, &next_hidden)?;
        let logits = tape.add(&projected, &self.out_bias)?;
        Ok(StepOutput {
            logits,
            hidden: next_hidden,
            weights,
        })
    }
}

/// Alignment scores of every region against the decoder state:
/// `score[l] = w_score · tanh(w_dec·hidden + w_enc·features[l])`.
/// The decoder-state projection is computed once and shared across regions.
pub fn alignment_scores(
    tape: &Tape,
    hidden: &Tensor,
    features: &Tensor,
    params: &AttentionParams,
) -> Result<Tensor> {
    let regions = features.rows();
    let dec_proj = tape.matvec(&params.w_dec, hidden)?;
    let enc_proj = tape.matmul(features, &params.w_enc)?;
    let dec_tiled = tape.broadcast_rows(&dec_proj, regions)?;
    let combined = tape.add(&enc_proj, &dec_tiled)?;
    let activated = tape.tanh(&combined);
    tape.matvec(&activated, &params.w_score)
}

/// Softmax-normalized attention weights over the alignment scores.
pub fn attention_weights(tape: &Tape, scores: &Tensor) -> Result<Tensor> {
    tape.softmax(scores)
}

/// Context vector: the attention-weighted sum of the feature rows.
pub fn context_vector(tape: &Tape, weights: &Tensor, features: &Tensor) -> Result<Tensor> {
    if weights.shape().len() != 1 || weights.numel() != features.rows() {
        return Err(CoreError::Shape {
            op: "context_vector",
            lhs: weights.shape().to_vec(),
            rhs: features.shape().to_vec(),
        });
    }
    tape.vecmat(weights, features)
}

/// One GRU update:
/// `z = σ(Wz·x + Uz·h + bz)`, `r = σ(Wr·x + Ur·h + br)`,
/// `h̃ = tanh(Wh·x + Uh·(r∘h) + bh)`, `h' = (1−z)∘h + z∘h̃`.
pub fn gru_step(tape: &Tape, cell: &GruCell, input: &Tensor, hidden: &Tensor) -> Result<Tensor> {
    let gate = |w: &Tensor, u: &Tensor, b: &Tensor, h: &Tensor| -> Result<Tensor> {
        let wx = tape.matvec(w, input)?;
        let uh = tape.matvec(u, h)?;
        let s = tape.add(&wx, &uh)?;
        tape.add(&s, b)
    };
    let update = tape.sigmoid(&gate(&cell.w_update, &cell.u_update, &cell.b_update, hidden)?);
    let reset = tape.sigmoid(&gate(&cell.w_reset, &cell.u_reset, &cell.b_reset, hidden)?);
    let gated_hidden = tape.mul(&reset, hidden)?;
    let candidate = tape.tanh(&gate(&cell.w_cand, &cell.u_cand, &cell.b_cand, &gated_hidden)?);
    let keep = tape.affine(&update, -1.0, 1.0);
    let kept = tape.mul(&keep, hidden)?;
    let fresh = tape.mul(&update, &candidate)?;
    tape.add(&kept, &fresh)
}
