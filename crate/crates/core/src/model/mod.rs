//! Pre-layer-norm encoder-decoder transformer with a shared
//! embedding/output matrix and fixed sinusoidal positions.
//!
//! Parameters live in one flat, ordered list of tensors. The order is part of
//! the checkpoint format:
//!
//! ```text
//! embed                                   [V × d]
//! per encoder layer:
//!   ln1.gain ln1.bias                     [d] [d]
//!   attn.{wq bq wk bk wv bv wo bo}        [d × d] [d] ×4
//!   ln2.gain ln2.bias                     [d] [d]
//!   ff.{w1 b1 w2 b2}                      [d × f] [f] [f × d] [d]
//! enc.ln.gain enc.ln.bias                 [d] [d]
//! per decoder layer:
//!   ln1, self-attn, ln2, cross-attn, ln3, ff (same shapes as above)
//! dec.ln.gain dec.ln.bias                 [d] [d]
//! ```
//!
//! Parameter count, with `L` layers per stack:
//!
//! ```text
//! V·d + L·(4(d²+d) + 2d·f + f + d + 4d) + 2d      encoder side + embedding
//!     + L·(8(d²+d) + 2d·f + f + d + 6d) + 2d      decoder side
//! ```

mod forward;
mod infer;

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::tensor::{Tensor, TensorError};

pub use forward::{forward, forward_on_tape, load_params, ForwardMode};
pub use infer::{greedy_decode, greedy_decode_batch};

pub const LN_EPS: f64 = 1e-5;

const CHECKPOINT_MAGIC: &str = "mtlab-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("token id {id} out of range for vocab_size {vocab}")]
    Token { id: usize, vocab: usize },
    #[error("empty sequence")]
    Empty,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            d_ff: 128,
            max_seq_len: 64,
            vocab_size: crate::tokenizer::DEFAULT_VOCAB_SIZE,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    /// Shape of the reference bilingual checkpoint: six layers, eight heads.
    pub fn reference(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 6,
            num_heads: 8,
            d_model: 512,
            d_ff: 2048,
            max_seq_len: 512,
            vocab_size,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_layers == 0 || self.num_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("layers, heads, d_model and d_ff must be positive");
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must be at least 2");
        }
        if self.vocab_size < 4 {
            return fail("vocab_size too small");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must be in [0, 1)");
        }
        Ok(())
    }

    /// Closed-form parameter count (see the module docs).
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ff, self.num_layers);
        let attn = 4 * (d * d + d);
        let ff = 2 * d * f + f + d;
        v * d + l * (attn + ff + 4 * d) + 2 * d + l * (2 * attn + ff + 6 * d) + 2 * d
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncIdx {
    pub ln1: (usize, usize),
    pub attn: AttnIdx,
    pub ln2: (usize, usize),
    pub ff: FfIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecIdx {
    pub ln1: (usize, usize),
    pub self_attn: AttnIdx,
    pub ln2: (usize, usize),
    pub cross: AttnIdx,
    pub ln3: (usize, usize),
    pub ff: FfIdx,
}

/// Positions of every named parameter in the flat list.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: usize,
    pub enc: Vec<EncIdx>,
    pub enc_ln: (usize, usize),
    pub dec: Vec<DecIdx>,
    pub dec_ln: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        (
            self.push(format!("{prefix}.gain"), vec![d], Init::Ones),
            self.push(format!("{prefix}.bias"), vec![d], Init::Zeros),
        )
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        (
            self.push(format!("{prefix}.{w}"), vec![fan_in, fan_out], Init::Xavier),
            self.push(format!("{prefix}.{b}"), vec![fan_out], Init::Zeros),
        )
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let (wq, bq) = self.linear(prefix, "wq", "bq", d, d);
        let (wk, bk) = self.linear(prefix, "wk", "bk", d, d);
        let (wv, bv) = self.linear(prefix, "wv", "bv", d, d);
        let (wo, bo) = self.linear(prefix, "wo", "bo", d, d);
        AttnIdx { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn ff(&mut self, prefix: &str, d: usize, f: usize) -> FfIdx {
        let (w1, b1) = self.linear(prefix, "w1", "b1", d, f);
        let (w2, b2) = self.linear(prefix, "w2", "b2", f, d);
        FfIdx { w1, b1, w2, b2 }
    }
}

pub(crate) fn layout(config: &ModelConfig) -> (Vec<ParamSpec>, Layout) {
    let (d, f) = (config.d_model, config.d_ff);
    let mut b = SpecBuilder { specs: Vec::new() };
    let embed = b.push("embed".into(), vec![config.vocab_size, d], Init::Xavier);
    let enc = (0..config.num_layers)
        .map(|l| {
            let p = format!("enc.{l}");
            EncIdx {
                ln1: b.ln(&format!("{p}.ln1"), d),
                attn: b.attn(&format!("{p}.attn"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                ff: b.ff(&format!("{p}.ff"), d, f),
            }
        })
        .collect();
    let enc_ln = b.ln("enc.ln", d);
    let dec = (0..config.num_layers)
        .map(|l| {
            let p = format!("dec.{l}");
            DecIdx {
                ln1: b.ln(&format!("{p}.ln1"), d),
                self_attn: b.attn(&format!("{p}.self_attn"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                cross: b.attn(&format!("{p}.cross_attn"), d),
                ln3: b.ln(&format!("{p}.ln3"), d),
                ff: b.ff(&format!("{p}.ff"), d, f),
            }
        })
        .collect();
    let dec_ln = b.ln("dec.ln", d);
    (
        b.specs,
        Layout {
            embed,
            enc,
            enc_ln,
            dec,
            dec_ln,
        },
    )
}

/// Fixed sinusoidal position table, `[len × d]` row-major.
pub fn sinusoidal_positions(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for p in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / d as f64);
            out[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Xavier-uniform weights (`±√(6/(fan_in+fan_out))`), zero biases, unit
    /// layer-norm gains; deterministic per seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = SplitMix64::derive(seed, "model-init");
        let (specs, _) = layout(config);
        let tensors = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Xavier => {
                        let bound = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                        (0..n).map(|_| rng.uniform(-bound, bound)).collect()
                    }
                };
                Tensor::new(s.shape.clone(), data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        layout(&self.config).0
    }

    pub(crate) fn layout(&self) -> Layout {
        layout(&self.config).1
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Checks a sequence against the vocabulary and length limits.
    pub fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Empty);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::Length {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::Token {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Checkpoint bytes: a text header of `key=value` lines closed by `end`,
    /// then every parameter as little-endian `f64` in layout order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = format!(
            "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nnum_layers={}\nnum_heads={}\nd_model={}\nd_ff={}\nmax_seq_len={}\nvocab_size={}\ndropout_rate={:?}\nparam_count={}\nend\n",
            c.num_layers,
            c.num_heads,
            c.d_model,
            c.d_ff,
            c.max_seq_len,
            c.vocab_size,
            c.dropout_rate,
            self.param_count()
        )
        .into_bytes();
        out.reserve(self.param_count() * 8);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let mut pos = 0;
        let mut next_line = || -> Result<&str, ModelError> {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))
        };
        if next_line()? != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(bad("bad magic or version"));
        }
        let mut fields = std::collections::BTreeMap::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| ModelError::Checkpoint(format!("missing {k}")));
        let int = |k: &str| -> Result<usize, ModelError> {
            get(k)?.parse().map_err(|_| ModelError::Checkpoint(format!("bad {k}")))
        };
        let config = ModelConfig {
            num_layers: int("num_layers")?,
            num_heads: int("num_heads")?,
            d_model: int("d_model")?,
            d_ff: int("d_ff")?,
            max_seq_len: int("max_seq_len")?,
            vocab_size: int("vocab_size")?,
            dropout_rate: get("dropout_rate")?.parse().map_err(|_| bad("bad dropout_rate"))?,
        };
        config.validate()?;
        if int("param_count")? != config.param_count() {
            return Err(bad("param_count does not match config"));
        }
        let body = &bytes[pos..];
        if body.len() != config.param_count() * 8 {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                config.param_count() * 8,
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let (specs, _) = layout(&config);
        let tensors = specs
            .iter()
            .map(|s| {
                let n = s.shape.iter().product();
                Tensor::new(s.shape.clone(), values.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ModelParams { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        ModelParams::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests;
