//! Checkpoint files: magic `UCKP`, u32 version 1, u64 tensor count, then per
//! tensor a u32 name length, the UTF-8 name, u32 rank, u32 extents, and the
//! little-endian f64 payload. Round trips are bitwise.
//!
//! One container serves both model kinds. A `meta.kind` entry distinguishes
//! caption models (1) from grammar classifiers (2); optimizer state, when
//! present, rides along under `opt.` names so training can resume exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use attncap_core::grammar::{GrammarClassifier, GrammarDims};
use attncap_core::model::{AttentionParams, CaptionModel, GruCell, ModelDims};
use attncap_core::train::OptimizerState;
use attncap_core::Tensor;

use crate::error::{CliError, FormatError};
use crate::fgrd::ByteReader;

pub const MAGIC: &[u8; 4] = b"UCKP";
pub const VERSION: u32 = 1;

const KIND_CAPTION: f64 = 1.0;
const KIND_GRAMMAR: f64 = 2.0;

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Entry {
    fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Entry {
        Entry {
            name: name.into(),
            shape,
            data,
        }
    }

    fn scalar(name: impl Into<String>, value: f64) -> Entry {
        Entry::new(name, vec![1], vec![value])
    }
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &extent in &e.shape {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>, FormatError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::new(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::new(4, format!("unsupported version {version}")));
    }
    let count = r.u64("tensor count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name_off = r.offset();
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| FormatError::new(name_off, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(FormatError::new(
                r.offset(),
                format!("tensor {name:?} has a zero extent"),
            ));
        }
        let data = r.f64s(numel, "tensor payload")?;
        entries.push(Entry { name, shape, data });
    }
    r.done()?;
    Ok(entries)
}

fn model_entries(model: &CaptionModel) -> Vec<Entry> {
    model
        .parameters()
        .into_iter()
        .map(|(name, t)| Entry::new(format!("model.{name}"), t.shape().to_vec(), t.to_vec()))
        .collect()
}

fn optimizer_entries(state: &OptimizerState, names: &[String]) -> Vec<Entry> {
    let mut out = vec![
        Entry::scalar("opt.step", state.step as f64),
        Entry::scalar("opt.epochs", state.epochs_done as f64),
    ];
    for ((first, second), name) in state.slot_buffers().zip(names) {
        out.push(Entry::new(
            format!("opt.first.{name}"),
            vec![first.len()],
            first.to_vec(),
        ));
        out.push(Entry::new(
            format!("opt.second.{name}"),
            vec![second.len()],
            second.to_vec(),
        ));
    }
    out
}

/// Serialize a caption model, optionally with its optimizer state.
pub fn encode_caption_model(model: &CaptionModel, state: Option<&OptimizerState>) -> Vec<u8> {
    let mut entries = vec![Entry::scalar("meta.kind", KIND_CAPTION)];
    entries.extend(model_entries(model));
    if let Some(state) = state {
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        entries.extend(optimizer_entries(state, &names));
    }
    encode(&entries)
}

pub fn encode_grammar_model(clf: &GrammarClassifier) -> Vec<u8> {
    let mut entries = vec![Entry::scalar("meta.kind", KIND_GRAMMAR)];
    entries.extend(clf.parameters().into_iter().map(|(name, t)| {
        Entry::new(format!("model.{name}"), t.shape().to_vec(), t.to_vec())
    }));
    encode(&entries)
}

struct EntryMap {
    map: BTreeMap<String, Entry>,
}

impl EntryMap {
    fn new(entries: Vec<Entry>) -> Result<EntryMap, CliError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if map.insert(e.name.clone(), e).is_some() {
                return Err(CliError::data("duplicate tensor name in checkpoint"));
            }
        }
        Ok(EntryMap { map })
    }

    fn kind(&self) -> Result<f64, CliError> {
        let e = self
            .map
            .get("meta.kind")
            .ok_or_else(|| CliError::data("checkpoint is missing meta.kind"))?;
        Ok(e.data[0])
    }

    fn tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor, CliError> {
        let key = format!("model.{name}");
        let e = self
            .map
            .get(&key)
            .ok_or_else(|| CliError::data(format!("checkpoint is missing tensor {key:?}")))?;
        if e.shape != shape {
            return Err(CliError::data(format!(
                "tensor {key:?} has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        Tensor::param(e.shape.clone(), e.data.clone()).map_err(CliError::from)
    }

    fn shape_of(&self, name: &str) -> Result<&[usize], CliError> {
        let key = format!("model.{name}");
        self.map
            .get(&key)
            .map(|e| e.shape.as_slice())
            .ok_or_else(|| CliError::data(format!("checkpoint is missing tensor {key:?}")))
    }

    fn optimizer(&self, names: &[String], params: &[Tensor]) -> Result<Option<OptimizerState>, CliError> {
        let step = match self.map.get("opt.step") {
            Some(e) => e.data[0] as u64,
            None => return Ok(None),
        };
        let epochs = self
            .map
            .get("opt.epochs")
            .map(|e| e.data[0] as u64)
            .unwrap_or(0);
        let mut buffers = Vec::with_capacity(names.len());
        for name in names {
            let first = self
                .map
                .get(&format!("opt.first.{name}"))
                .ok_or_else(|| CliError::data(format!("checkpoint is missing opt.first.{name}")))?;
            let second = self
                .map
                .get(&format!("opt.second.{name}"))
                .ok_or_else(|| CliError::data(format!("checkpoint is missing opt.second.{name}")))?;
            buffers.push((first.data.clone(), second.data.clone()));
        }
        let state = OptimizerState::from_buffers(params, buffers, step, epochs)?;
        Ok(Some(state))
    }
}

fn gru_from(map: &EntryMap, input: usize, hidden: usize) -> Result<GruCell, CliError> {
    Ok(GruCell {
        w_update: map.tensor("gru.w_update", &[hidden, input])?,
        u_update: map.tensor("gru.u_update", &[hidden, hidden])?,
        b_update: map.tensor("gru.b_update", &[hidden])?,
        w_reset: map.tensor("gru.w_reset", &[hidden, input])?,
        u_reset: map.tensor("gru.u_reset", &[hidden, hidden])?,
        b_reset: map.tensor("gru.b_reset", &[hidden])?,
        w_cand: map.tensor("gru.w_cand", &[hidden, input])?,
        u_cand: map.tensor("gru.u_cand", &[hidden, hidden])?,
        b_cand: map.tensor("gru.b_cand", &[hidden])?,
    })
}

/// Rebuild a caption model (dimensions inferred from the stored shapes) and,
/// when present, its optimizer state.
pub fn decode_caption_model(
    bytes: &[u8],
) -> Result<(CaptionModel, Option<OptimizerState>), CliError> {
    let map = EntryMap::new(decode(bytes)?)?;
    if map.kind()? != KIND_CAPTION {
        return Err(CliError::data(
            "checkpoint holds a grammar classifier, not a caption model",
        ));
    }
    let embed_shape = map.shape_of("embedding")?;
    let (vocab_size, embed_dim) = (embed_shape[0], embed_shape[1]);
    let enc_shape = map.shape_of("attention.w_enc")?;
    let (feature_dim, attn_dim) = (enc_shape[0], enc_shape[1]);
    let hidden_dim = map.shape_of("gru.u_update")?[0];
    let patch_dim = map.shape_of("patch_proj")?[0];
    let dims = ModelDims {
        feature_dim,
        embed_dim,
        attn_dim,
        hidden_dim,
        vocab_size,
        patch_dim,
    };
    let model = CaptionModel {
        dims,
        patch_proj: map.tensor("patch_proj", &[patch_dim, feature_dim])?,
        embedding: map.tensor("embedding", &[vocab_size, embed_dim])?,
        attention: AttentionParams {
            w_enc: map.tensor("attention.w_enc", &[feature_dim, attn_dim])?,
            w_dec: map.tensor("attention.w_dec", &[attn_dim, hidden_dim])?,
            w_score: map.tensor("attention.w_score", &[attn_dim])?,
        },
        gru: gru_from(&map, embed_dim + feature_dim, hidden_dim)?,
        out_weight: map.tensor("out_weight", &[vocab_size, hidden_dim])?,
        out_bias: map.tensor("out_bias", &[vocab_size])?,
        init_weight: map.tensor("init_weight", &[hidden_dim, feature_dim])?,
        init_bias: map.tensor("init_bias", &[hidden_dim])?,
    };
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let params = model.param_tensors();
    let state = map.optimizer(&names, &params)?;
    Ok((model, state))
}

pub fn decode_grammar_model(bytes: &[u8]) -> Result<GrammarClassifier, CliError> {
    let map = EntryMap::new(decode(bytes)?)?;
    if map.kind()? != KIND_GRAMMAR {
        return Err(CliError::data(
            "checkpoint holds a caption model, not a grammar classifier",
        ));
    }
    let embed_shape = map.shape_of("embedding")?;
    let (vocab_size, embed_dim) = (embed_shape[0], embed_shape[1]);
    let hidden_dim = map.shape_of("gru.u_update")?[0];
    Ok(GrammarClassifier {
        dims: GrammarDims {
            vocab_size,
            embed_dim,
            hidden_dim,
        },
        embedding: map.tensor("embedding", &[vocab_size, embed_dim])?,
        gru: gru_from(&map, embed_dim, hidden_dim)?,
        out_weight: map.tensor("out_weight", &[hidden_dim])?,
        out_bias: map.tensor("out_bias", &[1])?,
    })
}

pub fn save_caption_model(
    path: &Path,
    model: &CaptionModel,
    state: Option<&OptimizerState>,
) -> Result<(), CliError> {
    fs::write(path, encode_caption_model(model, state))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_caption_model(
    path: &Path,
) -> Result<(CaptionModel, Option<OptimizerState>), CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    decode_caption_model(&bytes)
        .map_err(|e| CliError::data(format!("{}: {}", path.display(), e.message)))
}

pub fn save_grammar_model(path: &Path, clf: &GrammarClassifier) -> Result<(), CliError> {
    fs::write(path, encode_grammar_model(clf))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_grammar_model(path: &Path) -> Result<GrammarClassifier, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    decode_grammar_model(&bytes)
        .map_err(|e| CliError::data(format!("{}: {}", path.display(), e.message)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use attncap_core::train::{optimizer_step, TrainingConfig};

    fn dims() -> ModelDims {
        ModelDims {
            feature_dim: 3,
            embed_dim: 2,
            attn_dim: 2,
            hidden_dim: 4,
            vocab_size: 6,
            patch_dim: 4,
        }
    }

    #[test]
    fn caption_model_round_trip_is_bitwise() {
        let model = CaptionModel::new(dims(), 77).unwrap();
        // Dirty the optimizer state so the slots are nontrivial.
        let params = model.param_tensors();
        for p in &params {
            let n = p.numel();
            p.accumulate_grad(&vec![0.25; n]);
        }
        let mut state = OptimizerState::new(&params);
        optimizer_step(&params, &mut state, &TrainingConfig::default()).unwrap();

        let bytes = encode_caption_model(&model, Some(&state));
        let (restored, restored_state) = decode_caption_model(&bytes).unwrap();
        let restored_state = restored_state.unwrap();

        assert_eq!(restored.dims, model.dims);
        for ((na, ta), (nb, tb)) in model.parameters().iter().zip(restored.parameters().iter()) {
            assert_eq!(na, nb);
            let a = ta.to_vec();
            let b = tb.to_vec();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits(), "{na}");
            }
        }
        assert_eq!(restored_state, state);

        // Re-encoding yields the very same bytes.
        let again = encode_caption_model(&restored, Some(&restored_state));
        assert_eq!(bytes, again);
    }

    #[test]
    fn model_only_checkpoint_has_no_state() {
        let model = CaptionModel::new(dims(), 3).unwrap();
        let bytes = encode_caption_model(&model, None);
        let (_, state) = decode_caption_model(&bytes).unwrap();
        assert!(state.is_none());
    }

    #[test]
    fn grammar_round_trip_and_kind_checks() {
        let clf = GrammarClassifier::new(
            GrammarDims {
                vocab_size: 8,
                embed_dim: 3,
                hidden_dim: 5,
            },
            9,
        )
        .unwrap();
        let bytes = encode_grammar_model(&clf);
        let restored = decode_grammar_model(&bytes).unwrap();
        assert_eq!(restored.dims, clf.dims);
        for ((_, a), (_, b)) in clf.parameters().iter().zip(restored.parameters().iter()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
        // Kind confusion is caught.
        assert!(decode_caption_model(&bytes).is_err());
        let model_bytes = encode_caption_model(&CaptionModel::new(dims(), 1).unwrap(), None);
        assert!(decode_grammar_model(&model_bytes).is_err());
    }

    #[test]
    fn bad_magic_version_and_truncation_name_offsets() {
        let model = CaptionModel::new(dims(), 5).unwrap();
        let bytes = encode_caption_model(&model, None);

        let mut bad = bytes.clone();
        bad[0] = b'Z';
        let err = decode(&bad).unwrap_err();
        assert_eq!(err.offset, 0);

        let mut bad = bytes.clone();
        bad[4] = 42;
        let err = decode(&bad).unwrap_err();
        assert_eq!(err.offset, 4);

        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.message.contains("truncated"));
        assert!(err.offset > 0);
    }

    #[test]
    fn missing_tensor_is_reported_by_name() {
        let model = CaptionModel::new(dims(), 5).unwrap();
        let mut entries = vec![Entry::scalar("meta.kind", KIND_CAPTION)];
        entries.extend(model_entries(&model).into_iter().skip(1)); // drop patch_proj
        let err = decode_caption_model(&encode(&entries)).unwrap_err();
        assert!(err.message.contains("patch_proj"), "{}", err.message);
    }
}
