//! Byte-level BPE with control tokens and per-language target tags.
//!
//! Id layout: `PAD`, `BOS`, `EOS`, one tag per language code (in declaration
//! order), the 256 single-byte symbols, then one id per distinct merged
//! symbol in merge order.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const DEFAULT_VOCAB_SIZE: usize = 512;

const FORMAT_HEADER: &str = "#mtlab-bpe";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary budget {budget} must exceed {floor} (bytes + control tokens)")]
    Budget { budget: usize, floor: usize },
    #[error("invalid language code {0:?}")]
    BadLanguageCode(String),
    #[error("vocab file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// How a sentence is framed when encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framing<'a> {
    /// `[tag(lang), subwords…, EOS]`; the tag names the desired output language.
    Source(&'a str),
    /// `[BOS, subwords…, EOS]`.
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    languages: Vec<String>,
    /// Byte string of every non-control id, indexed by `id - first_symbol`.
    symbols: Vec<Vec<u8>>,
    merges: Vec<(usize, usize)>,
    merged_into: Vec<usize>,
    rank: HashMap<(usize, usize), usize>,
    by_bytes: HashMap<Vec<u8>, usize>,
}

fn valid_code(code: &str) -> bool {
    !code.is_empty()
        && code
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Vocab {
    /// A vocabulary with no merges: control tokens plus the byte alphabet.
    pub fn bytes_only(languages: &[&str]) -> Result<Self, VocabError> {
        let mut langs: Vec<String> = Vec::new();
        for &code in languages {
            if !valid_code(code) {
                return Err(VocabError::BadLanguageCode(code.to_string()));
            }
            if !langs.iter().any(|l| l == code) {
                langs.push(code.to_string());
            }
        }
        let symbols: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let first = 3 + langs.len();
        let by_bytes = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), first + i))
            .collect();
        Ok(Vocab {
            languages: langs,
            symbols,
            merges: Vec::new(),
            merged_into: Vec::new(),
            rank: HashMap::new(),
            by_bytes,
        })
    }

    pub fn control_count(&self) -> usize {
        3 + self.languages.len()
    }

    fn first_symbol(&self) -> usize {
        self.control_count()
    }

    pub fn len(&self) -> usize {
        self.control_count() + self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn merges(&self) -> &[(usize, usize)] {
        &self.merges
    }

    pub fn is_control(&self, id: usize) -> bool {
        id < self.control_count()
    }

    pub fn tag(&self, code: &str) -> Result<usize, VocabError> {
        self.languages
            .iter()
            .position(|l| l == code)
            .map(|i| 3 + i)
            .ok_or_else(|| VocabError::UnknownLanguage(code.to_string()))
    }

    /// Bytes of a non-control token.
    pub fn symbol_bytes(&self, id: usize) -> Option<&[u8]> {
        id.checked_sub(self.first_symbol())
            .and_then(|i| self.symbols.get(i))
            .map(|s| s.as_slice())
    }

    pub fn byte_id(&self, b: u8) -> usize {
        self.first_symbol() + b as usize
    }

    fn add_merge(&mut self, left: usize, right: usize) -> usize {
        let mut bytes = self.symbol_bytes(left).unwrap().to_vec();
        bytes.extend_from_slice(self.symbol_bytes(right).unwrap());
        let id = match self.by_bytes.get(&bytes) {
            Some(&id) => id,
            None => {
                let id = self.len();
                self.symbols.push(bytes.clone());
                self.by_bytes.insert(bytes, id);
                id
            }
        };
        self.rank.insert((left, right), self.merges.len());
        self.merges.push((left, right));
        self.merged_into.push(id);
        id
    }

    /// Subword ids of `text`, without framing tokens.
    pub fn encode_subwords(&self, text: &[u8]) -> Vec<usize> {
        let mut seq: Vec<usize> = text.iter().map(|&b| self.byte_id(b)).collect();
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| self.rank.get(&(w[0], w[1])).copied())
                .min();
            let Some(r) = best else { break };
            let (l, rr) = self.merges[r];
            seq = replace_pair(&seq, l, rr, self.merged_into[r]);
        }
        seq
    }

    pub fn encode(&self, text: impl AsRef<[u8]>, framing: Framing<'_>) -> Result<Vec<usize>, VocabError> {
        let head = match framing {
            Framing::Source(code) => self.tag(code)?,
            Framing::Target => BOS,
        };
        let mut ids = vec![head];
        ids.extend(self.encode_subwords(text.as_ref()));
        ids.push(EOS);
        Ok(ids)
    }

    /// Byte string of `ids` with every control token dropped.
    pub fn decode_bytes(&self, ids: &[usize]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            if id >= self.len() {
                return Err(VocabError::IdOutOfRange { id, size: self.len() });
            }
            if let Some(b) = self.symbol_bytes(id) {
                out.extend_from_slice(b);
            }
        }
        Ok(out)
    }

    /// As [`Vocab::decode_bytes`], with invalid UTF-8 replaced by U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> Result<String, VocabError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Plain-text form: a header with the format version and the control
    /// tokens, then one merge per line as two hex-encoded byte strings.
    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT_HEADER} {FORMAT_VERSION} controls=PAD,BOS,EOS");
        for l in &self.languages {
            let _ = write!(out, ",tag:{l}");
        }
        out.push('\n');
        for &(l, r) in &self.merges {
            let _ = writeln!(
                out,
                "{} {}",
                hex::encode(self.symbol_bytes(l).unwrap()),
                hex::encode(self.symbol_bytes(r).unwrap())
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let parse_err = |line: usize, msg: &str| VocabError::Parse { line, msg: msg.to_string() };
        let mut lines = text.split_terminator('\n');
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(FORMAT_HEADER) {
            return Err(parse_err(1, "bad magic"));
        }
        if parts.next() != Some(&FORMAT_VERSION.to_string()) {
            return Err(parse_err(1, "unsupported version"));
        }
        let controls = parts
            .next()
            .and_then(|p| p.strip_prefix("controls="))
            .ok_or_else(|| parse_err(1, "missing controls"))?;
        if parts.next().is_some() {
            return Err(parse_err(1, "trailing header fields"));
        }
        let controls: Vec<&str> = controls.split(',').collect();
        if controls.len() < 3 || controls[..3] != ["PAD", "BOS", "EOS"] {
            return Err(parse_err(1, "controls must start with PAD,BOS,EOS"));
        }
        let langs = controls[3..]
            .iter()
            .map(|c| c.strip_prefix("tag:").ok_or_else(|| parse_err(1, "bad tag token")))
            .collect::<Result<Vec<_>, _>>()?;
        let mut vocab = Vocab::bytes_only(&langs)?;
        if vocab.languages.len() != langs.len() {
            return Err(parse_err(1, "duplicate tag token"));
        }
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let (l, r) = line.split_once(' ').ok_or_else(|| parse_err(n, "expected two symbols"))?;
            let decode = |s: &str| -> Result<usize, VocabError> {
                let bytes = hex::decode(s).map_err(|e| parse_err(n, &e.to_string()))?;
                vocab
                    .by_bytes
                    .get(&bytes)
                    .copied()
                    .ok_or_else(|| parse_err(n, "symbol not yet defined"))
            };
            let (l, r) = (decode(l)?, decode(r)?);
            if vocab.rank.contains_key(&(l, r)) {
                return Err(parse_err(n, "duplicate merge"));
            }
            vocab.add_merge(l, r);
        }
        Ok(vocab)
    }
}

fn replace_pair(seq: &[usize], left: usize, right: usize, merged: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Learns merges greedily by pair frequency until the vocabulary reaches
/// `target_size` or no adjacent pair occurs at least twice. Ties go to the
/// pair whose (left, right) byte strings compare smallest.
pub fn train_bpe<S: AsRef<[u8]>>(
    corpus: &[S],
    target_size: usize,
    languages: &[&str],
) -> Result<Vocab, VocabError> {
    let mut vocab = Vocab::bytes_only(languages)?;
    if target_size <= vocab.len() {
        return Err(VocabError::Budget {
            budget: target_size,
            floor: vocab.len(),
        });
    }
    if corpus.iter().all(|s| s.as_ref().is_empty()) {
        return Err(VocabError::EmptyCorpus);
    }

    let mut unique: HashMap<&[u8], u64> = HashMap::new();
    for s in corpus {
        if !s.as_ref().is_empty() {
            *unique.entry(s.as_ref()).or_default() += 1;
        }
    }
    let mut seqs: Vec<(Vec<usize>, u64)> = unique
        .into_iter()
        .map(|(s, c)| (s.iter().map(|&b| vocab.byte_id(b)).collect(), c))
        .collect();
    seqs.sort_unstable();

    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    for (seq, c) in &seqs {
        for w in seq.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += c;
        }
    }

    while vocab.len() < target_size {
        let mut best: Option<((usize, usize), u64)> = None;
        for (&pair, &c) in &counts {
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    c > bc
                        || (c == bc
                            && (vocab.symbol_bytes(pair.0), vocab.symbol_bytes(pair.1))
                                < (vocab.symbol_bytes(bp.0), vocab.symbol_bytes(bp.1)))
                }
            };
            if better {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), c)) = best else { break };
        if c < 2 {
            break;
        }
        let merged = vocab.add_merge(l, r);
        for (seq, weight) in seqs.iter_mut() {
            if !seq.windows(2).any(|w| w[0] == l && w[1] == r) {
                continue;
            }
            for w in seq.windows(2) {
                let e = counts.get_mut(&(w[0], w[1])).unwrap();
                *e -= *weight;
            }
            *seq = replace_pair(seq, l, r, merged);
            for w in seq.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += *weight;
            }
        }
        counts.retain(|_, c| *c > 0);
    }
    Ok(vocab)
}
