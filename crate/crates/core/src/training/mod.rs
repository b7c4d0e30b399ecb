//! Supervised training with teacher forcing, and the model-building
//! strategies: direct fine-tuning, an intermediate stage on the union of all
//! pairs followed by per-pair fine-tuning, and bilingual transfer.

mod optim;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

pub use optim::{clip_grad_norm, global_norm, Adam};

use crate::corpus::{ParallelCorpus, Row, Split};
use crate::metrics::{chrf_corpus, ChrFConfig, MetricError};
use crate::model::{forward_on_tape, greedy_decode_batch, load_params, ForwardMode, ModelConfig, ModelError, ModelParams};
use crate::rng::SplitMix64;
use crate::tensor::Tape;
use crate::tokenizer::{train_bpe, Framing, Vocab, VocabError, PAD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no trainable examples ({dropped} dropped as overlong)")]
    Empty { dropped: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub include_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            shuffle: true,
            include_dev: false,
        }
    }
}

impl TrainConfig {
    /// `epochs = 0` and `learning_rate = 0` are accepted: both leave the
    /// starting parameters untouched.
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return fail("adam eps must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "epochs={}\nbatch_size={}\nlearning_rate={:?}\nbeta1={:?}\nbeta2={:?}\neps={:?}\nclip_norm={:?}\nseed={}\nshuffle={}\ninclude_dev={}\n",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.eps,
            self.clip_norm,
            self.seed,
            self.shuffle,
            self.include_dev
        )
    }

    /// Applies one `key=value` setting; returns false for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, TrainError> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
            v.parse()
                .map_err(|_| TrainError::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "eps" => self.eps = p(key, value)?,
            "clip_norm" => self.clip_norm = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "shuffle" => self.shuffle = p(key, value)?,
            "include_dev" => self.include_dev = p(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One encoded training pair: `src = [tag, …, EOS]`, `tgt = [BOS, …, EOS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Encodes rows for translation into each row's own target language.
/// Pairs longer than `max_seq_len` on either side are dropped and counted.
pub fn encode_rows<'a>(
    vocab: &Vocab,
    rows: impl IntoIterator<Item = (&'a Row, &'a str)>,
    max_seq_len: usize,
) -> Result<(Vec<Example>, usize), TrainError> {
    let mut out = Vec::new();
    let mut dropped = 0;
    for (row, lang) in rows {
        let src = vocab.encode(&row.source, Framing::Source(lang))?;
        let tgt = vocab.encode(&row.target, Framing::Target)?;
        if src.len() > max_seq_len || tgt.len() > max_seq_len {
            dropped += 1;
        } else {
            out.push(Example { src, tgt });
        }
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    pub examples: usize,
    pub dropped: usize,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// One line per epoch.
    pub fn to_text(&self) -> String {
        let mut s = format!("# examples={} dropped={} steps={}\n", self.examples, self.dropped, self.steps);
        for e in &self.epochs {
            let _ = writeln!(s, "epoch={} loss={:.6} seconds={:.3}", e.epoch, e.mean_loss, e.seconds);
        }
        s
    }
}

/// Token-weighted mean cross-entropy of one batch, with gradients left on
/// the tape.
fn batch_loss(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &[&Example],
    mode: &mut ForwardMode<'_>,
) -> Result<(crate::tensor::Var, Vec<crate::tensor::Var>, usize), TrainError> {
    let vars = load_params(tape, params, true);
    let srcs: Vec<&[usize]> = batch.iter().map(|e| e.src.as_slice()).collect();
    let inputs: Vec<&[usize]> = batch.iter().map(|e| &e.tgt[..e.tgt.len() - 1]).collect();
    let targets: Vec<usize> = batch.iter().flat_map(|e| e.tgt[1..].iter().copied()).collect();
    let logits = forward_on_tape(tape, params, &vars, &srcs, &inputs, mode)?;
    let loss = tape.cross_entropy(logits, &targets, PAD).map_err(ModelError::from)?;
    Ok((loss, vars, targets.len()))
}

/// Mean loss of `examples` in evaluation mode (no dropout, no update).
pub fn evaluate_loss(params: &ModelParams, examples: &[Example], batch_size: usize) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Empty { dropped: 0 });
    }
    let mut total = 0.0;
    let mut tokens = 0;
    let refs: Vec<&Example> = examples.iter().collect();
    for batch in refs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let (loss, _, n) = batch_loss(&mut tape, params, batch, &mut ForwardMode::Eval)?;
        total += tape.value(loss).data()[0] * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Adam with global-norm clipping over `epochs` passes of `examples`.
/// Deterministic given `config.seed`; `params` is not modified.
pub fn train(params: &ModelParams, examples: &[Example], config: &TrainConfig) -> Result<(ModelParams, TrainLog), TrainError> {
    config.validate()?;
    let max = params.config().max_seq_len;
    let usable: Vec<&Example> = examples
        .iter()
        .filter(|e| e.src.len() <= max && e.tgt.len() <= max && e.tgt.len() >= 2 && !e.src.is_empty())
        .collect();
    let dropped = examples.len() - usable.len();
    if usable.is_empty() {
        return Err(TrainError::Empty { dropped });
    }
    let mut out = params.clone();
    let mut log = TrainLog {
        examples: usable.len(),
        dropped,
        ..TrainLog::default()
    };
    let mut opt = Adam::new(out.tensors(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut order_rng = SplitMix64::derive(config.seed, "train/order");
    let mut dropout_rng = SplitMix64::derive(config.seed, "train/dropout");
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        if config.shuffle {
            order_rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        let mut tokens = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| usable[i]).collect();
            let mut tape = Tape::new();
            let mut mode = ForwardMode::Train { rng: &mut dropout_rng };
            let (loss, vars, n) = batch_loss(&mut tape, &out, &batch, &mut mode)?;
            total += tape.value(loss).data()[0] * n as f64;
            tokens += n;
            tape.backward(loss).map_err(ModelError::from)?;
            let mut grads: Vec<Vec<f64>> = vars
                .iter()
                .zip(out.tensors())
                .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
                .collect();
            clip_grad_norm(&mut grads, config.clip_norm);
            opt.step(out.tensors_mut(), &grads);
            log.steps += 1;
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: total / tokens.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if !out.all_finite() {
        return Err(TrainError::Model(ModelError::Tensor(crate::tensor::TensorError::NonFinite { op: "adam" })));
    }
    Ok((out, log))
}

/// As [`train`], folding in `dropped` pairs already filtered at encoding.
fn train_counted(params: &ModelParams, examples: &[Example], dropped: usize, config: &TrainConfig) -> Result<(ModelParams, TrainLog), TrainError> {
    match train(params, examples, config) {
        Ok((p, mut log)) => {
            log.dropped += dropped;
            Ok((p, log))
        }
        Err(TrainError::Empty { dropped: d }) => Err(TrainError::Empty { dropped: d + dropped }),
        Err(e) => Err(e),
    }
}

/// A translation model: parameters plus the vocabulary they were built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocab: Vocab,
    pub params: ModelParams,
}

/// A pretrained starting point for fine-tuning.
pub type BaseModel = Model;
/// A base further trained on the union of all low-resource pairs.
pub type IntermediateModel = Model;

const VOCAB_FILE: &str = "vocab.txt";
const CHECKPOINT_FILE: &str = "model.ckpt";

impl Model {
    /// Fresh random weights over `vocab`; `config.vocab_size` is overridden.
    pub fn init(vocab: Vocab, config: &ModelConfig, seed: u64) -> Result<Self, TrainError> {
        let config = ModelConfig {
            vocab_size: vocab.len(),
            ..config.clone()
        };
        let params = ModelParams::init(&config, seed)?;
        Ok(Model { vocab, params })
    }

    /// Vocabulary text followed by checkpoint bytes; equal models give equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = self.vocab.to_text().into_bytes();
        b.extend(self.params.to_bytes());
        b
    }

    /// Writes `vocab.txt` and `model.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let io = |e: std::io::Error| TrainError::Io {
            path: dir.display().to_string(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(VOCAB_FILE), self.vocab.to_text()).map_err(io)?;
        self.params.save(&dir.join(CHECKPOINT_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let path = dir.join(VOCAB_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let vocab = Vocab::from_text(&text)?;
        let params = ModelParams::load(&dir.join(CHECKPOINT_FILE))?;
        if params.config().vocab_size != vocab.len() {
            return Err(TrainError::Config(format!(
                "checkpoint vocab_size {} does not match vocabulary of {}",
                params.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(Model { vocab, params })
    }

    /// Greedy translation of `sources` into `target_lang`.
    pub fn translate<S: AsRef<str>>(&self, sources: &[S], target_lang: &str, max_len: usize) -> Result<Vec<String>, TrainError> {
        let max = self.params.config().max_seq_len;
        let mut srcs = Vec::with_capacity(sources.len());
        for s in sources {
            let mut ids = self.vocab.encode(s.as_ref(), Framing::Source(target_lang))?;
            if ids.len() > max {
                // Keep the tag, truncate the body and close with EOS.
                let eos = *ids.last().unwrap();
                ids.truncate(max - 1);
                ids.push(eos);
            }
            srcs.push(ids);
        }
        let mut out = Vec::with_capacity(srcs.len());
        // Bounded batches keep the decoder cache small.
        for chunk in srcs.chunks(64) {
            for ids in greedy_decode_batch(&self.params, chunk, max_len)? {
                out.push(self.vocab.decode(&ids)?);
            }
        }
        Ok(out)
    }

    /// Corpus chrF2 of greedy translations of one split.
    pub fn score(&self, corpus: &ParallelCorpus, split: Split) -> Result<f64, TrainError> {
        let rows: Vec<&Row> = corpus.split(split).collect();
        let sources: Vec<&str> = rows.iter().map(|r| r.source.as_str()).collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.target.as_str()).collect();
        let max_len = self.params.config().max_seq_len;
        let hyps = self.translate(&sources, &corpus.pair.target, max_len)?;
        Ok(chrf_corpus(&hyps, &refs, &ChrFConfig::default())?)
    }
}

/// One vocabulary for every model in an experiment: BPE learned on the
/// training text of all `corpora`, with a tag reserved for every target
/// language among them plus `extra_languages`.
pub fn build_shared_vocab(corpora: &[&ParallelCorpus], extra_languages: &[&str], size: usize) -> Result<Vocab, TrainError> {
    let mut langs: Vec<&str> = Vec::new();
    for l in corpora.iter().map(|c| c.pair.target.as_str()).chain(extra_languages.iter().copied()) {
        if !langs.contains(&l) {
            langs.push(l);
        }
    }
    let text: Vec<&str> = corpora
        .iter()
        .flat_map(|c| c.split(Split::Train))
        .flat_map(|r| [r.source.as_str(), r.target.as_str()])
        .collect();
    Ok(train_bpe(&text, size, &langs)?)
}

/// Examples from the train split of `corpus`, plus dev when the config says so.
pub fn corpus_examples(vocab: &Vocab, corpus: &ParallelCorpus, config: &TrainConfig, max_seq_len: usize) -> Result<(Vec<Example>, usize), TrainError> {
    vocab.tag(&corpus.pair.target)?;
    let rows = corpus
        .rows
        .iter()
        .filter(|r| r.split == Split::Train || (config.include_dev && r.split == Split::Dev))
        .map(|r| (r, corpus.pair.target.as_str()));
    encode_rows(vocab, rows, max_seq_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseKind {
    /// One high-resource pair, standing in for a public one-to-one model.
    Bilingual,
    /// Several pairs routed by target-language tags.
    Multilingual,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Bilingual => "bilingual",
            BaseKind::Multilingual => "multilingual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bilingual" => Some(BaseKind::Bilingual),
            "multilingual" => Some(BaseKind::Multilingual),
            _ => None,
        }
    }
}

/// Trains a base model from random initialization (seeded by
/// `config.seed`) on the high-resource corpora.
pub fn pretrain_base(
    kind: BaseKind,
    corpora: &[ParallelCorpus],
    vocab: &Vocab,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(BaseModel, TrainLog), TrainError> {
    match (kind, corpora.len()) {
        (BaseKind::Bilingual, 1) => {}
        (BaseKind::Multilingual, n) if n >= 2 => {}
        (_, n) => {
            return Err(TrainError::Config(format!(
                "{} base needs {} pair(s), got {n}",
                kind.name(),
                if kind == BaseKind::Bilingual { "exactly 1" } else { "at least 2" }
            )))
        }
    }
    let init = Model::init(vocab.clone(), model_config, SplitMix64::derive(config.seed, "init").next_u64())?;
    let mut examples = Vec::new();
    let mut dropped = 0;
    for c in corpora {
        let (e, d) = corpus_examples(vocab, c, config, model_config.max_seq_len)?;
        examples.extend(e);
        dropped += d;
    }
    let (params, log) = train_counted(&init.params, &examples, dropped, config)?;
    Ok((Model { vocab: init.vocab, params }, log))
}

/// Continues training `base` on one pair. `base` is left untouched.
pub fn finetune_direct(base: &BaseModel, pair: &ParallelCorpus, config: &TrainConfig) -> Result<(Model, TrainLog), TrainError> {
    let (examples, dropped) = corpus_examples(&base.vocab, pair, config, base.params.config().max_seq_len)?;
    let (params, log) = train_counted(&base.params, &examples, dropped, config)?;
    Ok((
        Model {
            vocab: base.vocab.clone(),
            params,
        },
        log,
    ))
}

/// The concatenation of every pair's training rows, shuffled by `seed`.
/// Each row keeps its own target-language tag.
pub fn combined_dataset<'a>(pairs: &'a [ParallelCorpus], config: &TrainConfig) -> Vec<(&'a Row, &'a str)> {
    let mut rows: Vec<(&Row, &str)> = pairs
        .iter()
        .flat_map(|c| {
            c.rows
                .iter()
                .filter(|r| r.split == Split::Train || (config.include_dev && r.split == Split::Dev))
                .map(move |r| (r, c.pair.target.as_str()))
        })
        .collect();
    SplitMix64::derive(config.seed, "combined").shuffle(&mut rows);
    rows
}

/// Trains `base` on the union of all pairs.
pub fn build_intermediate(
    base: &BaseModel,
    pairs: &[ParallelCorpus],
    config: &TrainConfig,
) -> Result<(IntermediateModel, TrainLog), TrainError> {
    if pairs.len() < 2 {
        return Err(TrainError::Config(format!(
            "intermediate stage needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    for c in pairs {
        base.vocab.tag(&c.pair.target)?;
    }
    let rows = combined_dataset(pairs, config);
    let (examples, dropped) = encode_rows(&base.vocab, rows, base.params.config().max_seq_len)?;
    let (params, log) = train_counted(&base.params, &examples, dropped, config)?;
    Ok((
        Model {
            vocab: base.vocab.clone(),
            params,
        },
        log,
    ))
}

/// Per-pair fine-tuning starting from an intermediate model.
pub fn finetune_from_intermediate(
    inter: &IntermediateModel,
    pair: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    finetune_direct(inter, pair, config)
}

/// How a per-pair model is built. `base` names a base-model definition.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    DirectFinetune { base: String, stage: TrainConfig },
    IntermediateThenFinetune { base: String, combined: TrainConfig, per_pair: TrainConfig },
    BilingualTransfer { base: String, stage: TrainConfig },
    /// No transfer: random initialization, same per-pair budget.
    FromScratch { stage: TrainConfig },
}

impl Strategy {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Strategy::DirectFinetune { .. } => "direct",
            Strategy::IntermediateThenFinetune { .. } => "intermediate",
            Strategy::BilingualTransfer { .. } => "bilingual",
            Strategy::FromScratch { .. } => "scratch",
        }
    }

    pub fn base(&self) -> Option<&str> {
        match self {
            Strategy::DirectFinetune { base, .. }
            | Strategy::IntermediateThenFinetune { base, .. }
            | Strategy::BilingualTransfer { base, .. } => Some(base),
            Strategy::FromScratch { .. } => None,
        }
    }

    /// The config of the final, per-pair stage.
    pub fn final_stage(&self) -> &TrainConfig {
        match self {
            Strategy::DirectFinetune { stage, .. }
            | Strategy::BilingualTransfer { stage, .. }
            | Strategy::FromScratch { stage } => stage,
            Strategy::IntermediateThenFinetune { per_pair, .. } => per_pair,
        }
    }

    pub fn final_stage_mut(&mut self) -> &mut TrainConfig {
        match self {
            Strategy::DirectFinetune { stage, .. }
            | Strategy::BilingualTransfer { stage, .. }
            | Strategy::FromScratch { stage } => stage,
            Strategy::IntermediateThenFinetune { per_pair, .. } => per_pair,
        }
    }
}
