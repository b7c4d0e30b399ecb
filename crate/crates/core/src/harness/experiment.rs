//! The two-phase protocol.
//!
//! Phase A trains every strategy on every evaluated pair without dev data
//! and scores dev. Phase B retrains with dev folded into training (every
//! strategy in full-grid mode, the dev-best one per pair otherwise) and
//! scores test.
//!
//! Every trained model is a node under `out/nodes/<hash>/`, where the hash
//! covers the stage config, the training rows and the starting checkpoint.
//! Scores live under `out/scores/<hash>.txt`, keyed by model and eval rows.
//! A node that already exists is loaded instead of retrained, so a rerun
//! of a finished experiment trains nothing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::plan::{CorpusSource, ExperimentPlan, Selection};
use super::report::ExperimentResult;
use super::{digest, hyp_file, write_atomic, HarnessError};
use crate::corpus::{make_multilingual_pretraining_pairs, make_shared_task_replica, Manifest, ParallelCorpus, Row, Split};
use crate::model::ModelConfig;
use crate::rng::SplitMix64;
use crate::training::{
    build_intermediate, build_shared_vocab, finetune_direct, finetune_from_intermediate, pretrain_base, Model, Strategy,
    TrainConfig, TrainLog,
};
use crate::tokenizer::Vocab;

/// The replica suite (plus the second pretraining pair) or every manifest
/// entry, in declaration order.
pub fn load_source(source: &CorpusSource) -> Result<Vec<ParallelCorpus>, HarnessError> {
    match source {
        CorpusSource::Replica { seed } => {
            let mut all = make_shared_task_replica(*seed);
            for c in make_multilingual_pretraining_pairs(*seed) {
                if !all.iter().any(|a| a.pair.target == c.pair.target) {
                    all.push(c);
                }
            }
            Ok(all)
        }
        CorpusSource::Manifest(path) => {
            let m = Manifest::load(path).map_err(|e| HarnessError::corpus(path.display().to_string(), e))?;
            m.entries
                .iter()
                .map(|e| e.load().map_err(|err| HarnessError::corpus(format!("pair {}", e.code), err)))
                .collect()
        }
    }
}

fn corpus_digest(c: &ParallelCorpus) -> String {
    let mut s = format!("{}\n", c.pair);
    for r in &c.rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.split, r.source, r.target);
    }
    digest(s.as_bytes())
}

/// Train rows capped at `train_limit`, dev/test rows at `eval_limit`.
fn limited(c: &ParallelCorpus, train_limit: Option<usize>, eval_limit: Option<usize>) -> ParallelCorpus {
    let mut seen: BTreeMap<Split, usize> = BTreeMap::new();
    let rows: Vec<Row> = c
        .rows
        .iter()
        .filter(|r| {
            let n = seen.entry(r.split).or_insert(0);
            *n += 1;
            let cap = if r.split == Split::Train { train_limit } else { eval_limit };
            cap.is_none_or(|cap| *n <= cap)
        })
        .cloned()
        .collect();
    ParallelCorpus {
        pair: c.pair.clone(),
        rows,
    }
}

fn stage_seed(run_seed: u64, plan_seed: u64, label: &str) -> u64 {
    SplitMix64::derive(run_seed ^ plan_seed.rotate_left(32), label).next_u64()
}

fn seeded(cfg: &TrainConfig, run_seed: u64, label: &str, include_dev: bool) -> TrainConfig {
    TrainConfig {
        seed: stage_seed(run_seed, cfg.seed, label),
        include_dev,
        ..cfg.clone()
    }
}

fn model_text(m: &ModelConfig) -> String {
    format!(
        "layers={} heads={} d_model={} d_ff={} max_seq_len={} vocab={} dropout={:?}",
        m.num_layers, m.num_heads, m.d_model, m.d_ff, m.max_seq_len, m.vocab_size, m.dropout_rate
    )
}

/// A trained model and where it lives.
#[derive(Clone)]
struct Node {
    model: Model,
    hash: String,
    digest: String,
    examples: usize,
    dropped: usize,
}

struct Runner<'p> {
    plan: &'p ExperimentPlan,
    out: PathBuf,
    corpora: BTreeMap<String, ParallelCorpus>,
    /// Pair codes in load order.
    order: Vec<String>,
    digests: BTreeMap<String, String>,
    vocab: Vocab,
    model_cfg: ModelConfig,
    steps: usize,
    timing: String,
    memo: BTreeMap<String, Node>,
}

impl Runner<'_> {
    fn node_dir(&self, hash: &str) -> PathBuf {
        self.out.join("nodes").join(hash)
    }

    /// Loads the node for `key` if it exists, otherwise trains it.
    fn node(&mut self, label: &str, key: String, build: impl FnOnce() -> Result<(Model, TrainLog), HarnessError>) -> Result<Node, HarnessError> {
        let hash = digest(key.as_bytes())[..24].to_string();
        if let Some(n) = self.memo.get(&hash) {
            return Ok(n.clone());
        }
        let dir = self.node_dir(&hash);
        let info_path = dir.join("node.txt");
        let node = if info_path.exists() {
            let model = Model::load(&dir)?;
            let info = std::fs::read_to_string(&info_path).map_err(|e| HarnessError::io(&info_path, e))?;
            let field = |k: &str| -> usize {
                info.lines()
                    .find_map(|l| l.strip_prefix(k))
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0)
            };
            Node {
                digest: digest(&model.to_bytes()),
                examples: field("examples="),
                dropped: field("dropped="),
                model,
                hash: hash.clone(),
            }
        } else {
            let start = Instant::now();
            let (model, log) = build()?;
            self.steps += log.steps;
            let _ = writeln!(self.timing, "{label}\t{hash}\t{:.3}s\t{} steps", start.elapsed().as_secs_f64(), log.steps);
            let tmp = self.out.join("nodes").join(format!(".tmp-{hash}"));
            let _ = std::fs::remove_dir_all(&tmp);
            model.save(&tmp)?;
            std::fs::write(tmp.join("train.log"), log.to_text()).map_err(|e| HarnessError::io(&tmp, e))?;
            let info = format!(
                "label={label}\nexamples={}\ndropped={}\nsteps={}\n\n{key}",
                log.examples, log.dropped, log.steps
            );
            std::fs::write(tmp.join("node.txt"), info).map_err(|e| HarnessError::io(&tmp, e))?;
            let _ = std::fs::remove_dir_all(&dir);
            std::fs::rename(&tmp, &dir).map_err(|e| HarnessError::io(&dir, e))?;
            Node {
                digest: digest(&model.to_bytes()),
                examples: log.examples,
                dropped: log.dropped,
                model,
                hash: hash.clone(),
            }
        };
        self.memo.insert(hash, node.clone());
        Ok(node)
    }

    fn corpus(&self, code: &str) -> Result<&ParallelCorpus, HarnessError> {
        self.corpora
            .get(code)
            .ok_or_else(|| HarnessError::Plan(format!("no corpus for pair {code:?}")))
    }

    fn base(&mut self, name: &str, run_seed: u64) -> Result<Node, HarnessError> {
        let def = self
            .plan
            .base(name)
            .ok_or_else(|| HarnessError::Plan(format!("unknown base {name:?}")))?
            .clone();
        let cfg = seeded(&def.train, run_seed, &format!("base/{name}"), false);
        let corpora: Vec<ParallelCorpus> = def.pairs.iter().map(|p| self.corpus(p).cloned()).collect::<Result<_, _>>()?;
        let key = format!(
            "pretrain {}\nvocab={}\nmodel={}\n{}corpora={}",
            def.kind.name(),
            digest(self.vocab.to_text().as_bytes()),
            model_text(&self.model_cfg),
            cfg.to_text(),
            def.pairs.iter().map(|p| self.digests[p].as_str()).collect::<Vec<_>>().join(",")
        );
        let (vocab, mc) = (self.vocab.clone(), self.model_cfg.clone());
        self.node(&format!("base {name}"), key, || {
            Ok(pretrain_base(def.kind, &corpora, &vocab, &mc, &cfg)?)
        })
    }

    fn finetune(&mut self, label: &str, start: &Node, pair: &str, cfg: &TrainConfig) -> Result<Node, HarnessError> {
        let corpus = self.corpus(pair)?.clone();
        let key = format!("finetune\nstart={}\n{}corpus={}", start.digest, cfg.to_text(), self.digests[pair]);
        let model = start.model.clone();
        let cfg = cfg.clone();
        self.node(label, key, move || Ok(finetune_direct(&model, &corpus, &cfg)?))
    }

    /// Trains one (strategy, pair) cell and returns the final model.
    fn cell(&mut self, name: &str, strategy: &Strategy, pair: &str, run_seed: u64, include_dev: bool) -> Result<(Node, usize), HarnessError> {
        let phase = if include_dev { "final" } else { "dev" };
        let label = format!("{name}/{pair}/{phase}");
        let seed_label = format!("{name}/{pair}");
        match strategy {
            Strategy::DirectFinetune { base, stage } | Strategy::BilingualTransfer { base, stage } => {
                let b = self.base(base, run_seed)?;
                let n = self.finetune(&label, &b, pair, &seeded(stage, run_seed, &seed_label, include_dev))?;
                Ok((n.clone(), n.dropped))
            }
            Strategy::IntermediateThenFinetune { base, combined, per_pair } => {
                let b = self.base(base, run_seed)?;
                let pairs: Vec<String> = self.eval_pairs();
                let corpora: Vec<ParallelCorpus> = pairs.iter().map(|p| self.corpus(p).cloned()).collect::<Result<_, _>>()?;
                let cfg = seeded(combined, run_seed, &format!("{name}/combined"), include_dev);
                let key = format!(
                    "intermediate\nstart={}\n{}corpora={}",
                    b.digest,
                    cfg.to_text(),
                    pairs.iter().map(|p| self.digests[p].as_str()).collect::<Vec<_>>().join(",")
                );
                let start = b.model.clone();
                let inter = self.node(&format!("{name}/combined/{phase}"), key, move || {
                    Ok(build_intermediate(&start, &corpora, &cfg)?)
                })?;
                let cfg = seeded(per_pair, run_seed, &seed_label, include_dev);
                let corpus = self.corpus(pair)?.clone();
                let key = format!("finetune\nstart={}\n{}corpus={}", inter.digest, cfg.to_text(), self.digests[pair]);
                let im = inter.model.clone();
                let n = self.node(&label, key, move || Ok(finetune_from_intermediate(&im, &corpus, &cfg)?))?;
                Ok((n.clone(), n.dropped + inter.dropped))
            }
            Strategy::FromScratch { stage } => {
                let cfg = seeded(stage, run_seed, &seed_label, include_dev);
                let init_seed = SplitMix64::derive(cfg.seed, "init").next_u64();
                let corpus = self.corpus(pair)?.clone();
                let key = format!(
                    "scratch\nvocab={}\nmodel={}\ninit={init_seed}\n{}corpus={}",
                    digest(self.vocab.to_text().as_bytes()),
                    model_text(&self.model_cfg),
                    cfg.to_text(),
                    self.digests[pair]
                );
                let (vocab, mc) = (self.vocab.clone(), self.model_cfg.clone());
                let n = self.node(&label, key, move || {
                    let init = Model::init(vocab, &mc, init_seed)?;
                    Ok(finetune_direct(&init, &corpus, &cfg)?)
                })?;
                Ok((n.clone(), n.dropped))
            }
        }
    }

    /// Full-precision chrF2 of `node` on one split, cached by content.
    fn score(&mut self, node: &Node, pair: &str, split: Split) -> Result<Option<(f64, PathBuf)>, HarnessError> {
        let corpus = self.corpus(pair)?.clone();
        if corpus.count(split) == 0 {
            return Ok(None);
        }
        let key = format!(
            "score\nmodel={}\ncorpus={}\nsplit={split}\nmax_len={}",
            node.digest, self.digests[pair], self.plan.max_decode_len
        );
        let hash = digest(key.as_bytes())[..24].to_string();
        let path = self.out.join("scores").join(format!("{hash}.txt"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Some(v) = text.lines().find_map(|l| l.strip_prefix("score=")).and_then(|v| v.parse().ok()) {
                return Ok(Some((v, path)));
            }
        }
        let rows: Vec<&Row> = corpus.split(split).collect();
        let sources: Vec<&str> = rows.iter().map(|r| r.source.as_str()).collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.target.as_str()).collect();
        let hyps = node.model.translate(&sources, pair, self.plan.max_decode_len)?;
        let v = crate::metrics::chrf_corpus(&hyps, &refs, &crate::metrics::ChrFConfig::default())?;
        write_atomic(&self.out.join("scores").join(format!("{hash}.hyp")), hyp_file(&hyps).as_bytes())?;
        write_atomic(&path, format!("score={v:?}\ncheckpoint=nodes/{}\n{key}\n", node.hash).as_bytes())?;
        Ok(Some((v, path)))
    }

    fn eval_pairs(&self) -> Vec<String> {
        match &self.plan.pairs {
            Some(p) => p.clone(),
            None => {
                let used: Vec<&String> = self.plan.bases.iter().flat_map(|b| &b.pairs).collect();
                self.order.iter().filter(|c| !used.contains(c)).cloned().collect()
            }
        }
    }
}

/// Runs (or resumes) `plan`, writing nodes, scores, per-cell records and
/// `result.txt` under `out`.
pub fn run_experiment(plan: &ExperimentPlan, out: &Path) -> Result<ExperimentResult, HarnessError> {
    plan.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let loaded = load_source(&plan.corpus)?;
    let order: Vec<String> = loaded.iter().map(|c| c.pair.target.clone()).collect();
    let corpora: BTreeMap<String, ParallelCorpus> = loaded
        .iter()
        .map(|c| (c.pair.target.clone(), limited(c, plan.train_limit, plan.eval_limit)))
        .collect();
    for b in &plan.bases {
        for p in &b.pairs {
            if !corpora.contains_key(p) {
                return Err(HarnessError::Plan(format!("base {} uses unknown pair {p:?}", b.name)));
            }
        }
    }
    let digests: BTreeMap<String, String> = corpora.iter().map(|(k, c)| (k.clone(), corpus_digest(c))).collect();

    let mut runner = Runner {
        plan,
        out: out.to_path_buf(),
        corpora,
        order: order.clone(),
        digests,
        vocab: Vocab::bytes_only(&[]).map_err(crate::training::TrainError::from)?,
        model_cfg: plan.model.clone(),
        steps: 0,
        timing: String::new(),
        memo: BTreeMap::new(),
    };
    let pairs = runner.eval_pairs();
    for p in &pairs {
        runner.corpus(p)?;
    }
    let mut used: Vec<String> = plan.bases.iter().flat_map(|b| b.pairs.clone()).collect();
    used.extend(pairs.iter().cloned());
    let mut vocab_codes: Vec<&str> = Vec::new();
    for code in order.iter().filter(|c| used.contains(c)) {
        vocab_codes.push(code);
    }

    // Shared vocabulary, cached like a node.
    let vocab_key = format!(
        "vocab size={}\n{}",
        plan.vocab_size,
        vocab_codes.iter().map(|c| runner.digests[*c].as_str()).collect::<Vec<_>>().join(",")
    );
    let vocab_path = out.join("vocab").join(format!("{}.txt", &digest(vocab_key.as_bytes())[..24]));
    runner.vocab = match std::fs::read_to_string(&vocab_path) {
        Ok(text) => Vocab::from_text(&text).map_err(crate::training::TrainError::from)?,
        Err(_) => {
            let refs: Vec<&ParallelCorpus> = vocab_codes.iter().map(|c| &runner.corpora[*c]).collect();
            let v = build_shared_vocab(&refs, &[], plan.vocab_size)?;
            write_atomic(&vocab_path, v.to_text().as_bytes())?;
            v
        }
    };
    runner.model_cfg.vocab_size = runner.vocab.len();

    let names: Vec<String> = plan.strategies.iter().map(|s| s.name.clone()).collect();
    let mut result = ExperimentResult {
        strategies: names.clone(),
        pairs: pairs.clone(),
        plan: plan.to_text(),
        ..Default::default()
    };
    #[derive(Default)]
    struct Acc {
        per_seed: BTreeMap<(String, String, Split), Vec<f64>>,
        dropped: BTreeMap<(String, Split), usize>,
        cell_files: BTreeMap<(String, String, Split), String>,
    }
    let mut acc = Acc::default();

    let run_phase = |runner: &mut Runner, result: &mut ExperimentResult, acc: &mut Acc, cells: &[(String, String)], split: Split| {
        let Acc {
            per_seed,
            dropped,
            cell_files,
        } = acc;
        for &seed in &plan.seeds {
            for (name, pair) in cells {
                let key = (name.clone(), pair.clone(), split);
                if result.failed.contains_key(&key) {
                    continue;
                }
                let strategy = &plan.strategies.iter().find(|s| &s.name == name).unwrap().strategy;
                let outcome = runner
                    .cell(name, strategy, pair, seed, split == Split::Test)
                    .and_then(|(node, d)| Ok((runner.score(&node, pair, split)?, node, d)));
                match outcome {
                    Ok((score, node, d)) => {
                        *dropped.entry((name.clone(), split)).or_insert(0) += d;
                        let rec = cell_files.entry(key.clone()).or_default();
                        let _ = writeln!(
                            rec,
                            "seed.{seed}.checkpoint=nodes/{}\nseed.{seed}.train_rows={}\nseed.{seed}.dropped={d}",
                            node.hash, node.examples
                        );
                        if let Some((v, path)) = score {
                            let _ = writeln!(
                                rec,
                                "seed.{seed}.score={v:?}\nseed.{seed}.score_file={}",
                                path.strip_prefix(&runner.out).unwrap_or(&path).display()
                            );
                            per_seed.entry(key).or_default().push(v);
                        }
                    }
                    Err(e) => {
                        per_seed.remove(&key);
                        result.failed.insert(key, format!("seed {seed}: {e}").replace('\n', " "));
                    }
                }
            }
        }
    };

    let grid: Vec<(String, String)> = names
        .iter()
        .flat_map(|n| pairs.iter().map(move |p| (n.clone(), p.clone())))
        .collect();
    run_phase(&mut runner, &mut result, &mut acc, &grid, Split::Dev);
    for (k, v) in &acc.per_seed {
        result.scores.insert(k.clone(), v.iter().sum::<f64>() / v.len() as f64);
    }

    let finals: Vec<(String, String)> = match plan.selection {
        Selection::FullGrid => grid.clone(),
        Selection::PerPair => pairs
            .iter()
            .map(|p| {
                // Ties go to the strategy declared first.
                let mut best: Option<(&String, f64)> = None;
                for n in &names {
                    if let Some(v) = result.score(n, p, Split::Dev) {
                        if best.is_none_or(|(_, b)| v > b) {
                            best = Some((n, v));
                        }
                    }
                }
                let chosen = best.map(|b| b.0.clone()).unwrap_or_else(|| names[0].clone());
                result.selected.insert(p.clone(), chosen.clone());
                (chosen, p.clone())
            })
            .collect(),
    };
    run_phase(&mut runner, &mut result, &mut acc, &finals, Split::Test);
    for (k, v) in &acc.per_seed {
        result.scores.insert(k.clone(), v.iter().sum::<f64>() / v.len() as f64);
    }

    for ((name, pair, split), rec) in &acc.cell_files {
        let mut text = format!("strategy={name}\npair={pair}\nsplit={split}\n");
        if let Some(v) = result.score(name, pair, *split) {
            let _ = writeln!(text, "score={v:?}");
        }
        text.push_str(rec);
        write_atomic(&out.join("cells").join(split.name()).join(name).join(format!("{pair}.txt")), text.as_bytes())?;
    }

    for code in &order {
        let c = &runner.corpora[code];
        result.metadata.push((
            format!("corpus {}", c.pair),
            format!(
                "train={} dev={} test={} sha256={}",
                c.count(Split::Train),
                c.count(Split::Dev),
                c.count(Split::Test),
                &runner.digests[code][..16]
            ),
        ));
    }
    result.metadata.push(("vocabulary".into(), format!("{} symbols", runner.vocab.len())));
    result
        .metadata
        .push(("model parameters".into(), runner.model_cfg.param_count().to_string()));
    for ((name, split), d) in &acc.dropped {
        let phase = if *split == Split::Test { "final" } else { "dev" };
        result.metadata.push((format!("dropped overlong pairs {phase} {name}"), d.to_string()));
    }
    result.training_steps = runner.steps;
    result.wall_seconds = start.elapsed().as_secs_f64();
    result.save(&out.join("result.txt"))?;
    let _ = writeln!(
        runner.timing,
        "total\t{:.3}s\t{} steps",
        result.wall_seconds, result.training_steps
    );
    let mut log = std::fs::read_to_string(out.join("run.log")).unwrap_or_default();
    log.push_str(&runner.timing);
    write_atomic(&out.join("run.log"), log.as_bytes())?;
    Ok(result)
}
