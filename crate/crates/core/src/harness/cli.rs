//! Command-line front end. Every subcommand accepts `--seed`, `--config`
//! (a `key = value` file, with an optional `[model]` section) and `--out`.
//! Flags override config values.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::kv::KvFile;
use super::plan::{model_section, CorpusSource, ExperimentPlan, REPLICA_PLAN};
use super::report::{render_report, ExperimentResult, ReportFormat};
use super::{hyp_file, load_source, run_experiment, write_atomic, HarnessError};
use crate::corpus::{Manifest, ManifestEntry, ParallelCorpus, Split, SplitSource};
use crate::metrics::{chrf_corpus, ChrFConfig};
use crate::model::ModelConfig;
use crate::training::{build_shared_vocab, finetune_direct, pretrain_base, BaseKind, Model, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "mtlab", about = "Desk-scale transfer-learning lab for low-resource MT")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for data generation and training
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key = value settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic replica corpora and a manifest
    GenData,
    /// Train a base model on high-resource pairs
    Pretrain {
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated pair codes
        #[arg(long)]
        pairs: Option<String>,
        /// Manifest path (default: the replica suite)
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fine-tune a saved model on one pair
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        pair: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        include_dev: bool,
    },
    /// Score hypotheses against references, or a model on a split
    Evaluate {
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref", id = "reference")]
        reference: Option<PathBuf>,
        #[arg(long, conflicts_with = "hyp")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        pair: Option<String>,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run or resume an experiment plan
    Experiment {
        /// Plan file (default: the packaged replica plan)
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Render the report of a finished experiment
    Report {
        /// Experiment directory
        #[arg(long, default_value = "mtlab-run")]
        experiment: PathBuf,
        #[arg(long, default_value = "text-table")]
        format: String,
    },
    /// Print per-pair sentence counts
    Stats {
        /// Manifest path, or "replica" (default: the packaged shared-task sizes)
        #[arg(long)]
        manifest: Option<String>,
    },
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 2 on a usage error, 1 on any other error. Errors are
/// printed as one line: `error: <kind>: <message>`.
pub fn cli_main<S: AsRef<str>>(argv: &[S]) -> i32 {
    let args: Vec<&str> = argv.iter().map(AsRef::as_ref).collect();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

/// Settings from `--config`, with per-command key checks.
struct Settings {
    file: KvFile,
    origin: String,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, HarnessError> {
        match path {
            None => Ok(Settings {
                file: KvFile::default(),
                origin: String::new(),
            }),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                Ok(Settings {
                    file: KvFile::parse(&text, &p.display().to_string())?,
                    origin: p.display().to_string(),
                })
            }
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.file.sections.first().and_then(|s| s.get(key))
    }

    /// Model config from `[model]`, train config from the preamble; keys in
    /// `extra` are left for the caller; anything else is an error.
    fn configs(&self, extra: &[&str]) -> Result<(ModelConfig, TrainConfig), HarnessError> {
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        for s in self.file.sections.iter().skip(1) {
            if s.header[0] != "model" {
                return Err(HarnessError::config(&self.origin, s.line, &format!("unknown section [{}]", s.header[0])));
            }
            model_section(&self.origin, s, &mut model)?;
        }
        if let Some(pre) = self.file.sections.first() {
            for (k, v, n) in &pre.entries {
                if extra.contains(&k.as_str()) {
                    continue;
                }
                let known = train
                    .set(k, v)
                    .map_err(|e| HarnessError::config(&self.origin, *n, &e.to_string()))?;
                if !known {
                    return Err(HarnessError::config(&self.origin, *n, &format!("unknown key {k:?}")));
                }
            }
        }
        Ok((model, train))
    }

    fn only(&self, allowed: &[&str]) -> Result<(), HarnessError> {
        for s in &self.file.sections {
            if !s.header.is_empty() {
                return Err(HarnessError::config(&self.origin, s.line, "sections are not accepted here"));
            }
            for (k, _, n) in &s.entries {
                if !allowed.contains(&k.as_str()) {
                    return Err(HarnessError::config(&self.origin, *n, &format!("unknown key {k:?}")));
                }
            }
        }
        Ok(())
    }
}

fn source(manifest: Option<&Path>, seed: u64) -> CorpusSource {
    match manifest {
        Some(p) => CorpusSource::Manifest(p.to_path_buf()),
        None => CorpusSource::Replica { seed },
    }
}

fn find<'a>(corpora: &'a [ParallelCorpus], code: &str) -> Result<&'a ParallelCorpus, HarnessError> {
    corpora
        .iter()
        .find(|c| c.pair.target == code)
        .ok_or_else(|| HarnessError::Plan(format!("no corpus for pair {code:?}")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn seed_of(common: &Common, settings: &Settings) -> Result<u64, HarnessError> {
    match (common.seed, settings.get("seed")) {
        (Some(s), _) => Ok(s),
        (None, Some(v)) => v
            .parse()
            .map_err(|_| HarnessError::config(&settings.origin, 0, &format!("bad seed {v:?}"))),
        (None, None) => Ok(1),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let common = cli.common;
    let settings = Settings::load(common.config.as_deref())?;
    let seed = seed_of(&common, &settings)?;
    let out = common.out.as_deref();
    match cli.cmd {
        Command::GenData => {
            settings.only(&["seed"])?;
            let dir = out.unwrap_or(Path::new("data"));
            let corpora = load_source(&CorpusSource::Replica { seed })?;
            let mut manifest = Manifest::default();
            for c in &corpora {
                let code = &c.pair.target;
                let sub = dir.join(code);
                std::fs::create_dir_all(&sub).map_err(|e| HarnessError::io(&sub, e))?;
                let mut entry = ManifestEntry::new(code);
                entry.language = Some(format!("synthetic {code}"));
                entry.family = Some("synthetic".into());
                for split in Split::ALL {
                    let s = sub.join(format!("{split}.{}", c.pair.source));
                    let t = sub.join(format!("{split}.{code}"));
                    c.write_split(split, &s, &t)
                        .map_err(|e| HarnessError::corpus(c.pair.to_string(), e))?;
                    entry.files.insert(split, SplitSource::TwoFile { source: s, target: t });
                    entry.sizes.insert(split, c.count(split));
                }
                manifest.entries.push(entry);
            }
            write_atomic(&dir.join("manifest.txt"), manifest.to_text(dir).as_bytes())?;
            println!("wrote {} pairs to {}", corpora.len(), dir.display());
        }
        Command::Pretrain { kind, pairs, manifest } => {
            let (model_cfg, mut train) = settings.configs(&["seed", "kind", "pairs", "vocab_size"])?;
            train.seed = seed;
            let kind_s = kind.or(settings.get("kind").map(String::from)).unwrap_or_else(|| "multilingual".into());
            let kind = BaseKind::parse(&kind_s).ok_or_else(|| HarnessError::Plan(format!("unknown base kind {kind_s:?}")))?;
            let pairs_s = pairs
                .or(settings.get("pairs").map(String::from))
                .unwrap_or_else(|| if kind == BaseKind::Bilingual { "en".into() } else { "en,pt".into() });
            let vocab_size: usize = match settings.get("vocab_size") {
                Some(v) => v
                    .parse()
                    .map_err(|_| HarnessError::config(&settings.origin, 0, &format!("bad vocab_size {v:?}")))?,
                None => crate::tokenizer::DEFAULT_VOCAB_SIZE,
            };
            let corpora = load_source(&source(manifest.as_deref(), seed))?;
            let chosen: Vec<ParallelCorpus> = pairs_s
                .split(',')
                .map(|p| find(&corpora, p.trim()).cloned())
                .collect::<Result<_, _>>()?;
            // Tags for every pair in the source are reserved up front.
            let refs: Vec<&ParallelCorpus> = corpora.iter().collect();
            let vocab = build_shared_vocab(&refs, &[], vocab_size)?;
            let (model, log) = pretrain_base(kind, &chosen, &vocab, &model_cfg, &train)?;
            let dir = out.unwrap_or(Path::new("base"));
            model.save(dir)?;
            write_atomic(&dir.join("train.log"), log.to_text().as_bytes())?;
            print!("{}", log.to_text());
        }
        Command::Finetune {
            base,
            pair,
            manifest,
            include_dev,
        } => {
            let (_, mut train) = settings.configs(&["seed"])?;
            train.seed = seed;
            train.include_dev |= include_dev;
            let base = Model::load(&base)?;
            let corpora = load_source(&source(manifest.as_deref(), seed))?;
            let (model, log) = finetune_direct(&base, find(&corpora, &pair)?, &train)?;
            let dir = out.unwrap_or(Path::new("finetuned"));
            model.save(dir)?;
            write_atomic(&dir.join("train.log"), log.to_text().as_bytes())?;
            print!("{}", log.to_text());
        }
        Command::Evaluate {
            hyp,
            reference,
            model,
            pair,
            split,
            manifest,
        } => {
            settings.only(&["seed"])?;
            let score = if let (Some(h), Some(r)) = (hyp, reference) {
                let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e));
                let (h, r) = (read(&h)?, read(&r)?);
                let hyps: Vec<&str> = h.lines().collect();
                let refs: Vec<&str> = r.lines().collect();
                chrf_corpus(&hyps, &refs, &ChrFConfig::default())?
            } else if let (Some(m), Some(pair)) = (model, pair) {
                let split = Split::parse(&split).ok_or_else(|| HarnessError::Plan(format!("unknown split {split:?}")))?;
                let model = Model::load(&m)?;
                let corpora = load_source(&source(manifest.as_deref(), seed))?;
                let corpus = find(&corpora, &pair)?;
                let sources: Vec<&str> = corpus.split(split).map(|r| r.source.as_str()).collect();
                let refs: Vec<&str> = corpus.split(split).map(|r| r.target.as_str()).collect();
                let hyps = model.translate(&sources, &pair, model.params.config().max_seq_len)?;
                if let Some(o) = out {
                    write_atomic(o, hyp_file(&hyps).as_bytes())?;
                }
                chrf_corpus(&hyps, &refs, &ChrFConfig::default())?
            } else {
                return Err(HarnessError::Plan("evaluate needs --hyp and --ref, or --model and --pair".into()));
            };
            println!("{score:.2}");
        }
        Command::Experiment { plan } => {
            // Here --config names the plan itself.
            let mut p = match plan.or(common.config.clone()) {
                Some(path) => ExperimentPlan::load(&path)?,
                None => ExperimentPlan::parse(REPLICA_PLAN, "replica.plan", Path::new("."))?,
            };
            if let Some(s) = common.seed {
                p.seeds = vec![s];
            }
            let dir = out.map(Path::to_path_buf).or(p.out.clone()).unwrap_or_else(|| PathBuf::from("mtlab-run"));
            let r = run_experiment(&p, &dir)?;
            println!(
                "experiment done: {} scores, {} failed, {} training steps, {:.1}s; results in {}",
                r.scores.len(),
                r.failed.len(),
                r.training_steps,
                r.wall_seconds,
                dir.display()
            );
        }
        Command::Report { experiment, format } => {
            settings.only(&[])?;
            let fmt = ReportFormat::parse(&format).ok_or_else(|| HarnessError::Plan(format!("unknown format {format:?}")))?;
            let r = ExperimentResult::load(&experiment.join("result.txt"))?;
            emit(out, &render_report(&r, fmt))?;
        }
        Command::Stats { manifest } => {
            settings.only(&["seed"])?;
            let table = match manifest.as_deref() {
                None => Manifest::americasnlp_2023()
                    .stats()
                    .map_err(|e| HarnessError::corpus("packaged manifest", e))?,
                Some("replica") => crate::corpus::stats(&load_source(&CorpusSource::Replica { seed })?),
                Some(p) => Manifest::load(Path::new(p))
                    .and_then(|m| m.stats())
                    .map_err(|e| HarnessError::corpus(p, e))?,
            };
            emit(out, &table.render())?;
        }
    }
    Ok(())
}
