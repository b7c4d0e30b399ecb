//! Parallel corpora: line-aligned ingestion, split bookkeeping, manifest
//! files, and per-pair statistics.

mod manifest;
mod replica;
mod synth;

use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use manifest::{Manifest, ManifestEntry, SplitSource};
pub use replica::{make_multilingual_pretraining_pairs, make_shared_task_replica, ReplicaPair, REPLICA_TABLE};
pub use synth::{generate_synth_pair, template_sentences, Chunk, Role, SourceSentence, SynthLangSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line count mismatch {source_lines} vs {target_lines}")]
    Alignment {
        path: String,
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}:{line}: invalid UTF-8")]
    Encoding { path: String, line: usize },
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("invalid language pair id {0:?}")]
    PairId(String),
    #[error("need {needed} source sentences, have {available}")]
    Size { needed: usize, available: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Translation direction, e.g. `es-quy`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairId {
    pub source: String,
    pub target: String,
}

fn valid_code(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl PairId {
    pub fn new(source: &str, target: &str) -> Result<Self, CorpusError> {
        if !valid_code(source) || !valid_code(target) {
            return Err(CorpusError::PairId(format!("{source}-{target}")));
        }
        Ok(PairId {
            source: source.to_string(),
            target: target.to_string(),
        })
    }

    /// Accepts `src-tgt` or `src→tgt`.
    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        let (a, b) = s
            .split_once('-')
            .or_else(|| s.split_once('→'))
            .ok_or_else(|| CorpusError::PairId(s.to_string()))?;
        PairId::new(a, b)
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub source: String,
    pub target: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pair: PairId,
    pub rows: Vec<Row>,
}

impl ParallelCorpus {
    pub fn new(pair: PairId) -> Self {
        ParallelCorpus { pair, rows: Vec::new() }
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// `(source, target)` pairs of one split, in corpus order.
    pub fn pairs(&self, split: Split) -> Vec<(String, String)> {
        self.split(split)
            .map(|r| (r.source.clone(), r.target.clone()))
            .collect()
    }

    pub fn extend(&mut self, other: ParallelCorpus) {
        self.rows.extend(other.rows);
    }

    /// Writes one split in the two-file format.
    pub fn write_split(&self, split: Split, source_path: &Path, target_path: &Path) -> Result<(), CorpusError> {
        let mut s = String::new();
        let mut t = String::new();
        for r in self.split(split) {
            s.push_str(&r.source);
            s.push('\n');
            t.push_str(&r.target);
            t.push('\n');
        }
        write_file(source_path, &s)?;
        write_file(target_path, &t)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CorpusError> {
    std::fs::write(path, contents).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut body: &[u8] = &bytes;
    if body.last() == Some(&b'\n') {
        body = &body[..body.len() - 1];
    }
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, line)| {
            String::from_utf8(line.to_vec()).map_err(|_| CorpusError::Encoding {
                path: path.display().to_string(),
                line: i + 1,
            })
        })
        .collect()
}

fn check_row(path: &Path, line: usize, source: &str, target: &str) -> Result<(), CorpusError> {
    if source.is_empty() && target.is_empty() {
        return Err(CorpusError::Format {
            path: path.display().to_string(),
            line,
            msg: "empty source and target".into(),
        });
    }
    Ok(())
}

/// Two-file form: line `i` of `source_path` aligns with line `i` of
/// `target_path`.
pub fn load_corpus(source_path: &Path, target_path: &Path, pair: PairId, split: Split) -> Result<ParallelCorpus, CorpusError> {
    let src = read_lines(source_path)?;
    let tgt = read_lines(target_path)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::Alignment {
            path: format!("{} / {}", source_path.display(), target_path.display()),
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let mut rows = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.into_iter().zip(tgt).enumerate() {
        check_row(source_path, i + 1, &s, &t)?;
        rows.push(Row { source: s, target: t, split });
    }
    Ok(ParallelCorpus { pair, rows })
}

/// TSV form: exactly one tab per line separates source from target.
pub fn load_tsv(path: &Path, pair: PairId, split: Split) -> Result<ParallelCorpus, CorpusError> {
    let mut rows = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        let tabs = line.matches('\t').count();
        if tabs != 1 {
            return Err(CorpusError::Format {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected exactly one tab, found {tabs}"),
            });
        }
        let (s, t) = line.split_once('\t').unwrap();
        check_row(path, i + 1, s, t)?;
        rows.push(Row {
            source: s.to_string(),
            target: t.to_string(),
            split,
        });
    }
    Ok(ParallelCorpus { pair, rows })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRow {
    pub language: String,
    pub code: String,
    pub family: String,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Per-pair sentence counts laid out as Language, ISO, Family, Train, Dev, Test.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl StatsTable {
    pub fn total(&self, split: Split) -> usize {
        self.rows
            .iter()
            .map(|r| match split {
                Split::Train => r.train,
                Split::Dev => r.dev,
                Split::Test => r.test,
            })
            .sum()
    }

    pub fn render(&self) -> String {
        let header = ["Language", "ISO", "Family", "Train", "Dev", "Test"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.language.clone(),
                    r.code.clone(),
                    r.family.clone(),
                    thousands(r.train),
                    thousands(r.dev),
                    thousands(r.test),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = w - c.chars().count();
                if i >= 3 {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                } else {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&header.map(String::from));
        for row in &body {
            out.push_str(&line(row));
        }
        out
    }
}

/// One row per corpus: target code and split counts.
pub fn stats(corpora: &[ParallelCorpus]) -> StatsTable {
    StatsTable {
        rows: corpora
            .iter()
            .map(|c| StatsRow {
                language: "-".into(),
                code: c.pair.target.clone(),
                family: "-".into(),
                train: c.count(Split::Train),
                dev: c.count(Split::Dev),
                test: c.count(Split::Test),
            })
            .collect(),
    }
}
