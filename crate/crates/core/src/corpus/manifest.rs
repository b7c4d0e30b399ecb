//! Corpus manifests: one `[code]` block per language pair with `key = value`
//! lines. Recognized keys:
//!
//! ```text
//! [quy]
//! language = Quechua          # optional display name
//! family = Quechuan           # optional
//! source = es                 # source language code (default "es")
//! train.src = quy/train.es    # two-file form, paths relative to the manifest
//! train.tgt = quy/train.quy
//! dev.tsv = quy/dev.tsv       # or TSV form
//! test.size = 1003            # declared size; checked against files if both given
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{load_corpus, load_tsv, CorpusError, PairId, ParallelCorpus, Split, StatsRow, StatsTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitSource {
    TwoFile { source: PathBuf, target: PathBuf },
    Tsv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub code: String,
    pub language: Option<String>,
    pub family: Option<String>,
    pub source_lang: String,
    pub files: BTreeMap<Split, SplitSource>,
    pub sizes: BTreeMap<Split, usize>,
}

impl ManifestEntry {
    pub fn new(code: &str) -> Self {
        ManifestEntry {
            code: code.to_string(),
            language: None,
            family: None,
            source_lang: "es".into(),
            files: BTreeMap::new(),
            sizes: BTreeMap::new(),
        }
    }

    pub fn pair(&self) -> Result<PairId, CorpusError> {
        PairId::new(&self.source_lang, &self.code)
    }

    fn load_split(&self, split: Split) -> Result<Option<ParallelCorpus>, CorpusError> {
        let pair = self.pair()?;
        let corpus = match self.files.get(&split) {
            None => return Ok(None),
            Some(SplitSource::TwoFile { source, target }) => load_corpus(source, target, pair, split)?,
            Some(SplitSource::Tsv(path)) => load_tsv(path, pair, split)?,
        };
        if let Some(&declared) = self.sizes.get(&split) {
            if declared != corpus.rows.len() {
                return Err(CorpusError::Format {
                    path: format!("manifest [{}]", self.code),
                    line: 0,
                    msg: format!(
                        "{split}.size = {declared} but files hold {} rows",
                        corpus.rows.len()
                    ),
                });
            }
        }
        Ok(Some(corpus))
    }

    /// All splits that have files, as one corpus.
    pub fn load(&self) -> Result<ParallelCorpus, CorpusError> {
        let mut out = ParallelCorpus::new(self.pair()?);
        for split in Split::ALL {
            if let Some(c) = self.load_split(split)? {
                out.extend(c);
            }
        }
        Ok(out)
    }

    fn stats_row(&self) -> Result<StatsRow, CorpusError> {
        let mut counts = [0usize; 3];
        for (i, split) in Split::ALL.into_iter().enumerate() {
            counts[i] = match self.load_split(split)? {
                Some(c) => c.rows.len(),
                None => self.sizes.get(&split).copied().unwrap_or(0),
            };
        }
        Ok(StatsRow {
            language: self.language.clone().unwrap_or_else(|| "-".into()),
            code: self.code.clone(),
            family: self.family.clone().unwrap_or_else(|| "-".into()),
            train: counts[0],
            dev: counts[1],
            test: counts[2],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CorpusError> {
        let err = |line: usize, msg: String| CorpusError::Format {
            path: "manifest".into(),
            line,
            msg,
        };
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut pending: BTreeMap<Split, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
        let finish = |entry: &mut ManifestEntry,
                      pending: &mut BTreeMap<Split, (Option<PathBuf>, Option<PathBuf>)>,
                      line: usize|
         -> Result<(), CorpusError> {
            for (split, (s, t)) in std::mem::take(pending) {
                match (s, t) {
                    (Some(source), Some(target)) => {
                        entry.files.insert(split, SplitSource::TwoFile { source, target });
                    }
                    _ => return Err(err(line, format!("[{}] {split}: need both .src and .tgt", entry.code))),
                }
            }
            Ok(())
        };
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(code) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some(last) = entries.last_mut() {
                    finish(last, &mut pending, n)?;
                }
                if entries.iter().any(|e| e.code == code) {
                    return Err(err(n, format!("duplicate block [{code}]")));
                }
                let entry = ManifestEntry::new(code.trim());
                entry.pair()?;
                entries.push(entry);
                continue;
            }
            let entry = entries
                .last_mut()
                .ok_or_else(|| err(n, "key outside of a [code] block".into()))?;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(n, "expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "language" => entry.language = Some(value.to_string()),
                "family" => entry.family = Some(value.to_string()),
                "source" => entry.source_lang = value.to_string(),
                _ => {
                    let (split, field) = key
                        .split_once('.')
                        .and_then(|(s, f)| Split::parse(s).map(|s| (s, f)))
                        .ok_or_else(|| err(n, format!("unknown key {key:?}")))?;
                    let path = base_dir.join(value);
                    match field {
                        "size" => {
                            let v = value.replace(',', "").parse().map_err(|_| err(n, format!("bad size {value:?}")))?;
                            entry.sizes.insert(split, v);
                        }
                        "src" => pending.entry(split).or_default().0 = Some(path),
                        "tgt" => pending.entry(split).or_default().1 = Some(path),
                        "tsv" => {
                            entry.files.insert(split, SplitSource::Tsv(path));
                        }
                        _ => return Err(err(n, format!("unknown key {key:?}"))),
                    }
                }
            }
            entry.pair()?;
        }
        if let Some(last) = entries.last_mut() {
            finish(last, &mut pending, text.lines().count())?;
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Serializes with paths made relative to `base_dir` where possible.
    pub fn to_text(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base_dir).unwrap_or(p).display().to_string();
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "[{}]", e.code);
            if let Some(l) = &e.language {
                let _ = writeln!(out, "language = {l}");
            }
            if let Some(f) = &e.family {
                let _ = writeln!(out, "family = {f}");
            }
            let _ = writeln!(out, "source = {}", e.source_lang);
            for (split, src) in &e.files {
                match src {
                    SplitSource::TwoFile { source, target } => {
                        let _ = writeln!(out, "{split}.src = {}", rel(source));
                        let _ = writeln!(out, "{split}.tgt = {}", rel(target));
                    }
                    SplitSource::Tsv(p) => {
                        let _ = writeln!(out, "{split}.tsv = {}", rel(p));
                    }
                }
            }
            for (split, size) in &e.sizes {
                let _ = writeln!(out, "{split}.size = {size}");
            }
            out.push('\n');
        }
        out
    }

    pub fn load_corpora(&self) -> Result<Vec<ParallelCorpus>, CorpusError> {
        self.entries.iter().map(ManifestEntry::load).collect()
    }

    /// Counts from files where present, otherwise from declared sizes.
    pub fn stats(&self) -> Result<StatsTable, CorpusError> {
        Ok(StatsTable {
            rows: self
                .entries
                .iter()
                .map(ManifestEntry::stats_row)
                .collect::<Result<_, _>>()?,
        })
    }

    /// Shared-task split sizes (sizes only, no data files).
    pub fn americasnlp_2023() -> Self {
        Manifest::parse(include_str!("../../data/americasnlp2023.manifest"), Path::new("."))
            .expect("packaged manifest parses")
    }
}
