//! Command-line driver: prepare, train, caption, evaluate, grammar-train,
//! and attention sub-commands.
//!
//! Options resolve in fixed precedence: command-line flag, then the optional
//! `key=value` config file, then (for the seed) the `ATTNCAP_SEED`
//! environment variable, then the built-in default. Unknown flags and unknown
//! config keys are rejected. Every failure prints one `E<code>: message` line
//! to stderr and exits with that code: 1 for usage errors, 2 for data and
//! format errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use attncap_core::bleu::{corpus_bleu, sentence_bleu};
use attncap_core::decode::{beam_decode, greedy_decode, DecodeResult};
use attncap_core::grammar::{grammar_train, GrammarDims};
use attncap_core::model::{CaptionModel, FeatureGrid, ModelDims};
use attncap_core::text::{tokenize, CompoundLexicon, Normalizer};
use attncap_core::train::{fit, OptimizerKind, OptimizerState, TrainingConfig};
use attncap_core::vocab::Vocabulary;

use crate::checkpoint;
use crate::error::{CliError, EXIT_USAGE};
use crate::fgrd;
use crate::maps::emit_attention_maps;
use crate::report::{
    write_captions_jsonl, write_eval_report, write_train_log, CaptionLine, PerImageReport,
};
use crate::textdata::{read_captions, read_lexicon, read_vocab, write_vocab, CaptionRecord};

pub const SEED_ENV: &str = "ATTNCAP_SEED";

const DEFAULT_DIMS: &str = "16x32x64x64x128";
const DEFAULT_MAX_LEN: usize = 20;
const DEFAULT_SEED: u64 = 42;
/// Flattened pixels per patch for models created by the CLI. Only the
/// raw-pixel encoder consumes it; feature-file pipelines carry it along.
const DEFAULT_PATCH_DIM: usize = 16;

/// Keys the config file may contain (the flag names without dashes).
const CONFIG_KEYS: [&str; 21] = [
    "captions", "features", "lexicon", "vocab", "checkpoint", "out", "optimizer", "lr",
    "epochs", "batch", "beam", "max-len", "seed", "dims", "min-count", "momentum", "beta1",
    "beta2", "rho", "epsilon", "clip",
];

#[derive(Parser)]
#[command(
    name = "attncap",
    about = "Attention-based Urdu image caption generator",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and encoded dataset from a caption file.
    Prepare(PrepareArgs),
    /// Train the caption model, checkpointing every epoch.
    Train(TrainArgs),
    /// Decode captions for a feature file or directory.
    Caption(CaptionArgs),
    /// Score decoded captions against references with corpus BLEU.
    Evaluate(EvaluateArgs),
    /// Train the grammar-acceptability classifier.
    GrammarTrain(GrammarTrainArgs),
    /// Emit per-word attention heatmaps for one feature file.
    Attention(AttentionArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Optional key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Everything written lands under it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Caption file: image_id<TAB>index<TAB>text, one per line.
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Compound lexicon file, one space-separated entry per line.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Minimum word frequency kept in the vocabulary.
    #[arg(long)]
    min_count: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Directory of <image_id>.fgrd feature files.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Checkpoint to resume from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// sgd_momentum, adam, or rmsprop.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model dimensions as LxDxExAxH.
    #[arg(long)]
    dims: Option<String>,
}

#[derive(Args)]
struct CaptionArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One .fgrd file or a directory of them.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Beam width; without it decoding is greedy.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Reference captions file.
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct GrammarTrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled sentence file: the index column carries the 0/1 label.
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Existing vocabulary; built from the dataset when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    min_count: Option<u64>,
}

#[derive(Args)]
struct AttentionArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// A single .fgrd feature file.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

/// Flag/file/default resolution over the parsed config file.
struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn new(config: &Option<PathBuf>) -> Result<Resolver, CliError> {
        let file = match config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver { file })
    }

    fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key {key} has invalid value {raw:?}"))),
            None => Ok(None),
        }
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone()
            .or_else(|| self.file.get(key).map(PathBuf::from))
    }

    fn required_path(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        self.path(flag, key)
            .ok_or_else(|| CliError::usage(format!("--{key} is required")))
    }

    /// An input path must exist by the time the command validates.
    fn input_path(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let path = self.required_path(flag, key)?;
        if !path.exists() {
            return Err(CliError::data(format!(
                "--{key} path {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    fn optional_input_path(
        &self,
        flag: &Option<PathBuf>,
        key: &str,
    ) -> Result<Option<PathBuf>, CliError> {
        match self.path(flag, key) {
            Some(path) => {
                if !path.exists() {
                    return Err(CliError::data(format!(
                        "--{key} path {} does not exist",
                        path.display()
                    )));
                }
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(seed) = self.value(flag, "seed")? {
            return Ok(seed);
        }
        match std::env::var(SEED_ENV) {
            Ok(raw) => raw
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV} value {raw:?} is not a seed"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }

    fn training_config(
        &self,
        optimizer: Option<String>,
        lr: Option<f64>,
        epochs: Option<usize>,
        batch: Option<usize>,
        seed: Option<u64>,
    ) -> Result<TrainingConfig, CliError> {
        let mut cfg = TrainingConfig {
            optimizer: match self.value(optimizer, "optimizer")? {
                Some(name) => OptimizerKind::parse(&name)?,
                None => OptimizerKind::Adam,
            },
            seed: self.seed(seed)?,
            ..TrainingConfig::default()
        };
        if let Some(v) = self.value(lr, "lr")? {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.value(epochs, "epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.value(batch, "batch")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.value(None, "momentum")? {
            cfg.momentum = v;
        }
        if let Some(v) = self.value(None, "beta1")? {
            cfg.beta1 = v;
        }
        if let Some(v) = self.value(None, "beta2")? {
            cfg.beta2 = v;
        }
        if let Some(v) = self.value(None, "rho")? {
            cfg.rho = v;
        }
        if let Some(v) = self.value(None, "epsilon")? {
            cfg.epsilon = v;
        }
        if let Some(v) = self.value(None, "clip")? {
            cfg.clip_norm = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let content = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(CliError::usage(format!(
                "{}:{}: unknown config key {key:?}",
                path.display(),
                lineno + 1
            )));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(CliError::usage(format!(
                "{}:{}: duplicate config key {key:?}",
                path.display(),
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// `LxDxExAxH` to five positive extents.
fn parse_dims(raw: &str) -> Result<(usize, usize, usize, usize, usize), CliError> {
    let parts: Vec<&str> = raw.split('x').collect();
    if parts.len() != 5 {
        return Err(CliError::usage(format!(
            "dims {raw:?} must be LxDxExAxH (five numbers)"
        )));
    }
    let mut values = [0usize; 5];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| CliError::usage(format!("dims component {part:?} is not a positive number")))?;
    }
    Ok((values[0], values[1], values[2], values[3], values[4]))
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_lexicon(resolver: &Resolver, flag: &Option<PathBuf>) -> Result<CompoundLexicon, CliError> {
    match resolver.optional_input_path(flag, "lexicon")? {
        Some(path) => read_lexicon(&path),
        None => Ok(CompoundLexicon::empty()),
    }
}

fn tokenize_records(
    records: &[CaptionRecord],
    lexicon: &CompoundLexicon,
) -> Vec<(CaptionRecord, Vec<String>)> {
    let normalizer = Normalizer::default();
    records
        .iter()
        .map(|r| {
            let tokens = tokenize(&normalizer.normalize(&r.text), lexicon);
            (r.clone(), tokens)
        })
        .collect()
}

/// Sorted .fgrd files in a directory, or the single file itself.
fn feature_files(path: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    if path.is_file() {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::data(format!("{}: bad file name", path.display())))?;
        return Ok(vec![(stem.to_string(), path.to_path_buf())]);
    }
    let mut files = Vec::new();
    let entries =
        fs::read_dir(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("fgrd") {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::data(format!("{}: bad file name", p.display())))?
                .to_string();
            files.push((stem, p));
        }
    }
    if files.is_empty() {
        return Err(CliError::data(format!(
            "{}: no .fgrd feature files found",
            path.display()
        )));
    }
    files.sort();
    Ok(files)
}

fn load_model_checked(path: &Path, vocab: &Vocabulary) -> Result<CaptionModel, CliError> {
    let (model, _) = checkpoint::load_caption_model(path)?;
    if model.dims.vocab_size != vocab.len() {
        return Err(CliError::data(format!(
            "checkpoint vocabulary size {} does not match vocabulary file of {}",
            model.dims.vocab_size,
            vocab.len()
        )));
    }
    Ok(model)
}

fn decode_one(
    model: &CaptionModel,
    grid: &FeatureGrid,
    beam: Option<usize>,
    max_len: usize,
) -> Result<DecodeResult, CliError> {
    let result = match beam {
        Some(width) => beam_decode(model, grid, width, max_len)?,
        None => greedy_decode(model, grid, max_len)?,
    };
    Ok(result)
}

fn cmd_prepare(args: PrepareArgs) -> Result<(), CliError> {
    let r = Resolver::new(&args.common.config)?;
    let captions_path = r.input_path(&args.captions, "captions")?;
    let out = r.required_path(&args.common.out, "out")?;
    let min_count = r.value(args.min_count, "min-count")?.unwrap_or(1);
    let lexicon = load_lexicon(&r, &args.lexicon)?;

    let records = read_captions(&captions_path)?;
    let tokenized = tokenize_records(&records, &lexicon);
    let corpus: Vec<Vec<String>> = tokenized.iter().map(|(_, t)| t.clone()).collect();
    let vocab = Vocabulary::build(&corpus, min_count)?;

    ensure_out_dir(&out)?;
    write_vocab(&out.join("vocab.tsv"), &vocab)?;

    let mut encoded = String::new();
    for (record, tokens) in &tokenized {
        let ids: Vec<String> = vocab.encode(tokens).iter().map(u32::to_string).collect();
        encoded.push_str(&format!(
            "{}\t{}\t{}\n",
            record.image_id,
            record.index,
            ids.join(" ")
        ));
    }
    let encoded_path = out.join("encoded.tsv");
    fs::write(&encoded_path, encoded)
        .map_err(|e| CliError::data(format!("{}: {e}", encoded_path.display())))?;
    println!(
        "prepared {} captions, vocabulary of {} -> {}",
        records.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

fn load_training_set(
    records: &[CaptionRecord],
    lexicon: &CompoundLexicon,
    vocab: &Vocabulary,
    features_dir: &Path,
    expected_regions: usize,
    expected_dim: usize,
) -> Result<Vec<(FeatureGrid, Vec<u32>)>, CliError> {
    let mut dataset = Vec::with_capacity(records.len());
    for (record, tokens) in tokenize_records(records, lexicon) {
        let path = features_dir.join(format!("{}.fgrd", record.image_id));
        if !path.is_file() {
            return Err(CliError::data(format!(
                "missing feature file {}",
                path.display()
            )));
        }
        let grid = fgrd::read(&path)?;
        if grid.regions() != expected_regions || grid.dim() != expected_dim {
            return Err(CliError::data(format!(
                "{}: feature grid is {}x{}, expected {expected_regions}x{expected_dim}",
                path.display(),
                grid.regions(),
                grid.dim()
            )));
        }
        dataset.push((grid, vocab.encode(&tokens)));
    }
    Ok(dataset)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let r = Resolver::new(&args.common.config)?;
    let captions_path = r.input_path(&args.captions, "captions")?;
    let features_dir = r.input_path(&args.features, "features")?;
    let vocab_path = r.input_path(&args.vocab, "vocab")?;
    let out = r.required_path(&args.common.out, "out")?;
    let resume = r.optional_input_path(&args.checkpoint, "checkpoint")?;
    let dims_raw = r
        .value(args.dims.clone(), "dims")?
        .unwrap_or_else(|| DEFAULT_DIMS.to_string());
    let (regions, feature_dim, embed_dim, attn_dim, hidden_dim) = parse_dims(&dims_raw)?;
    let cfg = r.training_config(args.optimizer, args.lr, args.epochs, args.batch, args.seed)?;

    let vocab = read_vocab(&vocab_path)?;
    let lexicon = load_lexicon(&r, &args.lexicon)?;
    let records = read_captions(&captions_path)?;

    let (model, mut state) = match &resume {
        Some(path) => {
            let (model, state) = checkpoint::load_caption_model(path)?;
            if model.dims.vocab_size != vocab.len() {
                return Err(CliError::data(format!(
                    "checkpoint vocabulary size {} does not match vocabulary file of {}",
                    model.dims.vocab_size,
                    vocab.len()
                )));
            }
            let state = state.unwrap_or_else(|| OptimizerState::new(&model.param_tensors()));
            (model, state)
        }
        None => {
            let dims = ModelDims {
                feature_dim,
                embed_dim,
                attn_dim,
                hidden_dim,
                vocab_size: vocab.len(),
                patch_dim: DEFAULT_PATCH_DIM,
            };
            let model = CaptionModel::new(dims, cfg.seed)?;
            let state = OptimizerState::new(&model.param_tensors());
            (model, state)
        }
    };

    let dataset = load_training_set(
        &records,
        &lexicon,
        &vocab,
        &features_dir,
        regions,
        model.dims.feature_dim,
    )?;

    ensure_out_dir(&out)?;
    let latest = out.join("latest.ckpt");
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    let mut save_error: Option<CliError> = None;
    let mut last_tick = Instant::now();
    fit(&model, &dataset, &cfg, &mut state, |stats, state| {
        let seconds = last_tick.elapsed().as_secs_f64();
        last_tick = Instant::now();
        rows.push((stats.epoch, stats.mean_loss, seconds));
        if save_error.is_none() {
            save_error = checkpoint::save_caption_model(&latest, &model, Some(state)).err();
        }
    })?;
    if let Some(err) = save_error {
        return Err(err);
    }

    checkpoint::save_caption_model(&out.join("model.ckpt"), &model, Some(&state))?;
    write_train_log(&out.join("train_log.csv"), &rows)?;
    let final_loss = rows.last().map(|r| r.1).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} captions, final loss {final_loss} -> {}",
        rows.len(),
        dataset.len(),
        out.display()
    );
    Ok(())
}

fn cmd_caption(args: CaptionArgs) -> Result<(), CliError> {
    let r = Resolver::new(&args.common.config)?;
    let features = r.input_path(&args.features, "features")?;
    let vocab_path = r.input_path(&args.vocab, "vocab")?;
    let checkpoint_path = r.input_path(&args.checkpoint, "checkpoint")?;
    let out = r.required_path(&args.common.out, "out")?;
    let beam = r.value(args.beam, "beam")?;
    let max_len = r.value(args.max_len, "max-len")?.unwrap_or(DEFAULT_MAX_LEN);

    let vocab = read_vocab(&vocab_path)?;
    let model = load_model_checked(&checkpoint_path, &vocab)?;

    let mut lines = Vec::new();
    for (image_id, path) in feature_files(&features)? {
        let grid = fgrd::read(&path)?;
        let result = decode_one(&model, &grid, beam, max_len)?;
        lines.push(CaptionLine {
            image_id,
            caption: vocab.decode(&result.ids)?,
            logprob: result.total_logprob,
        });
    }
    ensure_out_dir(&out)?;
    write_captions_jsonl(&out.join("captions.jsonl"), &lines)?;
    println!("captioned {} images -> {}", lines.len(), out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let r = Resolver::new(&args.common.config)?;
    let captions_path = r.input_path(&args.captions, "captions")?;
    let features = r.input_path(&args.features, "features")?;
    let vocab_path = r.input_path(&args.vocab, "vocab")?;
    let checkpoint_path = r.input_path(&args.checkpoint, "checkpoint")?;
    let out = r.required_path(&args.common.out, "out")?;
    let beam = r.value(args.beam, "beam")?;
    let max_len = r.value(args.max_len, "max-len")?.unwrap_or(DEFAULT_MAX_LEN);

    let vocab = read_vocab(&vocab_path)?;
    let model = load_model_checked(&checkpoint_path, &vocab)?;
    let lexicon = load_lexicon(&r, &args.lexicon)?;

    let mut references: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for (record, tokens) in tokenize_records(&read_captions(&captions_path)?, &lexicon) {
        references.entry(record.image_id).or_default().push(tokens);
    }

    let mut pairs = Vec::new();
    let mut per_image = Vec::new();
    for (image_id, path) in feature_files(&features)? {
        let refs = references.get(&image_id).ok_or_else(|| {
            CliError::data(format!("no reference captions for image {image_id:?}"))
        })?;
        let grid = fgrd::read(&path)?;
        let result = decode_one(&model, &grid, beam, max_len)?;
        let caption = vocab.decode(&result.ids)?;
        let candidate: Vec<String> = caption.split(' ').filter(|w| !w.is_empty()).map(String::from).collect();
        let sentence = sentence_bleu(&candidate, refs, 4, None)?;
        per_image.push(PerImageReport {
            image_id,
            caption,
            bleu: sentence.score,
        });
        pairs.push((candidate, refs.clone()));
    }
    let corpus = corpus_bleu(&pairs, 4, None)?;
    ensure_out_dir(&out)?;
    write_eval_report(&out.join("eval.json"), &corpus, &per_image)?;
    println!(
        "corpus bleu {:.4} over {} images -> {}",
        corpus.score,
        per_image.len(),
        out.display()
    );
    Ok(())
}

fn cmd_grammar_train(args: GrammarTrainArgs) -> Result<(), CliError> {
    let r = Resolver::new(&args.common.config)?;
    let captions_path = r.input_path(&args.captions, "captions")?;
    let out = r.required_path(&args.common.out, "out")?;
    let vocab_path = r.optional_input_path(&args.vocab, "vocab")?;
    let min_count = r.value(args.min_count, "min-count")?.unwrap_or(1);
    let dims_raw = r
        .value(args.dims.clone(), "dims")?
        .unwrap_or_else(|| DEFAULT_DIMS.to_string());
    let (_, _, embed_dim, _, hidden_dim) = parse_dims(&dims_raw)?;
    let cfg = r.training_config(args.optimizer, args.lr, args.epochs, args.batch, args.seed)?;

    let lexicon = load_lexicon(&r, &args.lexicon)?;
    let records = read_captions(&captions_path)?;
    let tokenized = tokenize_records(&records, &lexicon);
    for (record, _) in &tokenized {
        if record.index > 1 {
            return Err(CliError::data(format!(
                "grammar label for {:?} must be 0 or 1, got {}",
                record.image_id, record.index
            )));
        }
    }

    ensure_out_dir(&out)?;
    let vocab = match vocab_path {
        Some(path) => read_vocab(&path)?,
        None => {
            let corpus: Vec<Vec<String>> = tokenized.iter().map(|(_, t)| t.clone()).collect();
            let vocab = Vocabulary::build(&corpus, min_count)?;
            write_vocab(&out.join("grammar_vocab.tsv"), &vocab)?;
            vocab
        }
    };

    let dataset: Vec<(Vec<u32>, bool)> = tokenized
        .iter()
        .map(|(record, tokens)| (vocab.encode(tokens), record.index == 1))
        .collect();

    let dims = GrammarDims {
        vocab_size: vocab.len(),
        embed_dim,
        hidden_dim,
    };
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    let mut last_tick = Instant::now();
    let (clf, _) = grammar_train(&dataset, dims, &cfg, cfg.seed, |epoch, loss| {
        let seconds = last_tick.elapsed().as_secs_f64();
        last_tick = Instant::now();
        rows.push((epoch, loss, seconds));
    })?;
    let accuracy = clf.accuracy(&dataset)?;

    checkpoint::save_grammar_model(&out.join("grammar.ckpt"), &clf)?;
    write_train_log(&out.join("grammar_log.csv"), &rows)?;
    println!(
        "grammar classifier trained {} epochs, train accuracy {accuracy:.3} -> {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_attention(args: AttentionArgs) -> Result<(), CliError> {
    let r = Resolver::new(&args.common.config)?;
    let features = r.input_path(&args.features, "features")?;
    let vocab_path = r.input_path(&args.vocab, "vocab")?;
    let checkpoint_path = r.input_path(&args.checkpoint, "checkpoint")?;
    let out = r.required_path(&args.common.out, "out")?;
    let beam = r.value(args.beam, "beam")?;
    let max_len = r.value(args.max_len, "max-len")?.unwrap_or(DEFAULT_MAX_LEN);

    if !features.is_file() {
        return Err(CliError::data(format!(
            "--features must name a single .fgrd file, got {}",
            features.display()
        )));
    }
    let vocab = read_vocab(&vocab_path)?;
    let model = load_model_checked(&checkpoint_path, &vocab)?;
    let grid = fgrd::read(&features)?;
    let side = (grid.regions() as f64).sqrt() as usize;
    if side * side != grid.regions() {
        return Err(CliError::data(format!(
            "feature grid of {} regions is not square, cannot draw heatmaps",
            grid.regions()
        )));
    }

    let result = decode_one(&model, &grid, beam, max_len)?;
    ensure_out_dir(&out)?;
    let written = emit_attention_maps(&result, side, &out)?;
    println!(
        "{}\n{} heatmaps -> {}",
        vocab.decode(&result.ids)?,
        written.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Caption(args) => cmd_caption(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::GrammarTrain(args) => cmd_grammar_train(args),
        Command::Attention(args) => cmd_attention(args),
    }
}

/// Parse and run. Returns the process exit code; errors have already been
/// printed as a single `E<code>:` line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e
                .to_string()
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("{}", CliError::usage(message).render());
            return EXIT_USAGE;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.render());
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("16x32x64x64x128").unwrap(), (16, 32, 64, 64, 128));
        assert!(parse_dims("16x32").is_err());
        assert!(parse_dims("16x32x64x64x0").is_err());
        assert!(parse_dims("axbxcxdxe").is_err());
    }

    #[test]
    fn config_file_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# comment\nlr = 0.01\nepochs=5\n\nseed=9\n").unwrap();
        let map = parse_config_file(&path).unwrap();
        assert_eq!(map.get("lr").unwrap(), "0.01");
        assert_eq!(map.get("epochs").unwrap(), "5");

        fs::write(&path, "unknown-key=1\n").unwrap();
        let err = parse_config_file(&path).unwrap_err();
        assert_eq!(err.code, EXIT_USAGE);

        fs::write(&path, "lr=1\nlr=2\n").unwrap();
        assert!(parse_config_file(&path).is_err());

        fs::write(&path, "just a line\n").unwrap();
        assert!(parse_config_file(&path).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "lr=0.5\nbatch=7\n").unwrap();
        let r = Resolver::new(&Some(path)).unwrap();
        let cfg = r
            .training_config(None, Some(0.125), None, None, Some(3))
            .unwrap();
        assert_eq!(cfg.learning_rate, 0.125); // flag wins
        assert_eq!(cfg.batch_size, 7); // file fills the gap
        assert_eq!(cfg.seed, 3);
    }
}
