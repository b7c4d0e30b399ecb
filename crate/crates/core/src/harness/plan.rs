//! Experiment plans.
//!
//! ```text
//! corpus = replica            # or a manifest path, relative to the plan
//! replica_seed = 1
//! pairs = quy,aym             # evaluated pairs; default: every pair no base trains on
//! seeds = 1,2                 # scores are averaged over seeds
//! selection = full-grid       # or per-pair
//! vocab_size = 512
//! max_decode_len = 64
//! train_limit = 64            # optional cap on training rows per pair and stage
//! eval_limit = 20             # optional cap on scored rows per split
//!
//! [model]
//! d_model = 64
//!
//! [base multi]
//! kind = multilingual         # or bilingual
//! pairs = en,pt
//! epochs = 4
//!
//! [strategy M1]
//! kind = direct               # direct | intermediate | bilingual | scratch
//! base = multi
//! epochs = 5
//!
//! [strategy M2]
//! kind = intermediate
//! base = multi
//! combined.epochs = 5         # stage-specific keys; plain keys set both stages
//! per_pair.epochs = 5
//! ```
//!
//! Training keys are those of [`TrainConfig::set`]; the `seed` key is mixed
//! into each stage's seed rather than used directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::kv::{KvFile, Section};
use super::HarnessError;
use crate::model::ModelConfig;
use crate::training::{BaseKind, Strategy, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    /// The synthetic shared-task stand-in plus the extra pretraining pair.
    Replica { seed: u64 },
    Manifest(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Every strategy is retrained and scored on test.
    FullGrid,
    /// Only the best strategy per pair on dev goes on to test.
    PerPair,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::FullGrid => "full-grid",
            Selection::PerPair => "per-pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseDef {
    pub name: String,
    pub kind: BaseKind,
    pub pairs: Vec<String>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyDef {
    pub name: String,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub corpus: CorpusSource,
    pub pairs: Option<Vec<String>>,
    pub seeds: Vec<u64>,
    pub selection: Selection,
    pub vocab_size: usize,
    pub max_decode_len: usize,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
    pub model: ModelConfig,
    pub bases: Vec<BaseDef>,
    pub strategies: Vec<StrategyDef>,
    pub out: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(origin: &str, line: usize, key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::config(origin, line, &format!("bad value {v:?} for {key}")))
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn train_key(origin: &str, cfg: &mut TrainConfig, key: &str, value: &str, line: usize) -> Result<bool, HarnessError> {
    cfg.set(key, value)
        .map_err(|e| HarnessError::config(origin, line, &e.to_string()))
}

pub(crate) fn model_section(origin: &str, s: &Section, m: &mut ModelConfig) -> Result<(), HarnessError> {
    for (k, v, n) in &s.entries {
        let (k, v, n) = (k.as_str(), v.as_str(), *n);
        match k {
            "num_layers" => m.num_layers = parse_num(origin, n, k, v)?,
            "num_heads" => m.num_heads = parse_num(origin, n, k, v)?,
            "d_model" => m.d_model = parse_num(origin, n, k, v)?,
            "d_ff" => m.d_ff = parse_num(origin, n, k, v)?,
            "max_seq_len" => m.max_seq_len = parse_num(origin, n, k, v)?,
            "dropout_rate" => m.dropout_rate = parse_num(origin, n, k, v)?,
            _ => return Err(HarnessError::config(origin, n, &format!("unknown model key {k:?}"))),
        }
    }
    Ok(())
}

fn section_name(origin: &str, s: &Section) -> Result<String, HarnessError> {
    match s.header.as_slice() {
        [_, name] => Ok(name.clone()),
        _ => Err(HarnessError::config(origin, s.line, &format!("expected [{} <name>]", s.header[0]))),
    }
}

fn base_section(origin: &str, s: &Section) -> Result<BaseDef, HarnessError> {
    let name = section_name(origin, s)?;
    let mut kind = None;
    let mut pairs = Vec::new();
    let mut train = TrainConfig::default();
    for (k, v, n) in &s.entries {
        match k.as_str() {
            "kind" => {
                kind = Some(BaseKind::parse(v).ok_or_else(|| HarnessError::config(origin, *n, &format!("unknown base kind {v:?}")))?)
            }
            "pairs" => pairs = list(v),
            _ => {
                if !train_key(origin, &mut train, k, v, *n)? {
                    return Err(HarnessError::config(origin, *n, &format!("unknown base key {k:?}")));
                }
            }
        }
    }
    let kind = kind.ok_or_else(|| HarnessError::config(origin, s.line, &format!("base {name} has no kind")))?;
    if pairs.is_empty() {
        return Err(HarnessError::config(origin, s.line, &format!("base {name} has no pairs")));
    }
    Ok(BaseDef { name, kind, pairs, train })
}

fn strategy_section(origin: &str, s: &Section) -> Result<StrategyDef, HarnessError> {
    let name = section_name(origin, s)?;
    let kind = s
        .get("kind")
        .ok_or_else(|| HarnessError::config(origin, s.line, &format!("strategy {name} has no kind")))?;
    let base = s.get("base").map(String::from);
    let mut stage = TrainConfig::default();
    let mut combined = TrainConfig::default();
    let mut per_pair = TrainConfig::default();
    for (k, v, n) in &s.entries {
        if k == "kind" || k == "base" {
            continue;
        }
        let ok = if let Some(k2) = k.strip_prefix("combined.") {
            kind == "intermediate" && train_key(origin, &mut combined, k2, v, *n)?
        } else if let Some(k2) = k.strip_prefix("per_pair.") {
            kind == "intermediate" && train_key(origin, &mut per_pair, k2, v, *n)?
        } else {
            train_key(origin, &mut stage, k, v, *n)?
                && train_key(origin, &mut combined, k, v, *n)?
                && train_key(origin, &mut per_pair, k, v, *n)?
        };
        if !ok {
            return Err(HarnessError::config(origin, *n, &format!("unknown strategy key {k:?}")));
        }
    }
    let need_base = || base.clone().ok_or_else(|| HarnessError::config(origin, s.line, &format!("strategy {name} needs a base")));
    let strategy = match kind {
        "direct" => Strategy::DirectFinetune { base: need_base()?, stage },
        "bilingual" => Strategy::BilingualTransfer { base: need_base()?, stage },
        "intermediate" => Strategy::IntermediateThenFinetune {
            base: need_base()?,
            combined,
            per_pair,
        },
        "scratch" => Strategy::FromScratch { stage },
        other => return Err(HarnessError::config(origin, s.line, &format!("unknown strategy kind {other:?}"))),
    };
    Ok(StrategyDef { name, strategy })
}

impl ExperimentPlan {
    /// Parses a plan; relative manifest paths resolve against `base_dir`.
    pub fn parse(text: &str, origin: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let f = KvFile::parse(text, origin)?;
        let mut plan = ExperimentPlan {
            corpus: CorpusSource::Replica { seed: 1 },
            pairs: None,
            seeds: vec![1],
            selection: Selection::FullGrid,
            vocab_size: crate::tokenizer::DEFAULT_VOCAB_SIZE,
            max_decode_len: 64,
            train_limit: None,
            eval_limit: None,
            model: ModelConfig::default(),
            bases: Vec::new(),
            strategies: Vec::new(),
            out: None,
        };
        let mut replica_seed = 1;
        let mut manifest = None;
        for (k, v, n) in &f.preamble().entries {
            let (k, v, n) = (k.as_str(), v.as_str(), *n);
            match k {
                "corpus" => manifest = if v == "replica" { None } else { Some(base_dir.join(v)) },
                "replica_seed" => replica_seed = parse_num(origin, n, k, v)?,
                "pairs" => plan.pairs = Some(list(v)),
                "seeds" => {
                    plan.seeds = list(v)
                        .iter()
                        .map(|s| parse_num(origin, n, k, s))
                        .collect::<Result<_, _>>()?
                }
                "selection" => {
                    plan.selection = match v {
                        "full-grid" => Selection::FullGrid,
                        "per-pair" => Selection::PerPair,
                        _ => return Err(HarnessError::config(origin, n, &format!("unknown selection {v:?}"))),
                    }
                }
                "vocab_size" => plan.vocab_size = parse_num(origin, n, k, v)?,
                "max_decode_len" => plan.max_decode_len = parse_num(origin, n, k, v)?,
                "train_limit" => plan.train_limit = Some(parse_num(origin, n, k, v)?),
                "eval_limit" => plan.eval_limit = Some(parse_num(origin, n, k, v)?),
                "out" => plan.out = Some(base_dir.join(v)),
                _ => return Err(HarnessError::config(origin, n, &format!("unknown plan key {k:?}"))),
            }
        }
        plan.corpus = match manifest {
            Some(p) => CorpusSource::Manifest(p),
            None => CorpusSource::Replica { seed: replica_seed },
        };
        for s in f.sections.iter().skip(1) {
            match s.header[0].as_str() {
                "model" => model_section(origin, s, &mut plan.model)?,
                "base" => plan.bases.push(base_section(origin, s)?),
                "strategy" => plan.strategies.push(strategy_section(origin, s)?),
                other => return Err(HarnessError::config(origin, s.line, &format!("unknown section [{other}]"))),
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        ExperimentPlan::parse(&text, &path.display().to_string(), path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Plan(m));
        if self.strategies.is_empty() {
            return err("plan declares no strategies".into());
        }
        if self.seeds.is_empty() {
            return err("plan declares no seeds".into());
        }
        let mut names: Vec<&str> = Vec::new();
        for n in self.bases.iter().map(|b| &b.name).chain(self.strategies.iter().map(|s| &s.name)) {
            if names.contains(&n.as_str()) {
                return err(format!("duplicate name {n:?}"));
            }
            names.push(n);
        }
        for b in &self.bases {
            if b.kind == BaseKind::Bilingual && b.pairs.len() != 1 {
                return err(format!("bilingual base {} needs exactly 1 pair", b.name));
            }
            if b.kind == BaseKind::Multilingual && b.pairs.len() < 2 {
                return err(format!("multilingual base {} needs at least 2 pairs", b.name));
            }
            b.train.validate().map_err(|e| HarnessError::Plan(format!("base {}: {e}", b.name)))?;
        }
        for s in &self.strategies {
            if let Some(base) = s.strategy.base() {
                let Some(def) = self.bases.iter().find(|b| b.name == base) else {
                    return err(format!("strategy {} references unknown base {base:?}", s.name));
                };
                if matches!(s.strategy, Strategy::BilingualTransfer { .. }) && def.kind != BaseKind::Bilingual {
                    return err(format!("strategy {} needs a bilingual base", s.name));
                }
            }
            if let Strategy::IntermediateThenFinetune { combined, .. } = &s.strategy {
                combined.validate().map_err(|e| HarnessError::Plan(format!("strategy {}: {e}", s.name)))?;
            }
            s.strategy
                .final_stage()
                .validate()
                .map_err(|e| HarnessError::Plan(format!("strategy {}: {e}", s.name)))?;
        }
        let mut model = self.model.clone();
        model.vocab_size = self.vocab_size;
        model.validate().map_err(|e| HarnessError::Plan(e.to_string()))?;
        if self.max_decode_len == 0 {
            return err("max_decode_len must be positive".into());
        }
        Ok(())
    }

    /// Canonical text: every setting spelled out, defaults included.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.corpus {
            CorpusSource::Replica { seed } => {
                let _ = writeln!(s, "corpus = replica\nreplica_seed = {seed}");
            }
            CorpusSource::Manifest(p) => {
                let _ = writeln!(s, "corpus = {}", p.display());
            }
        }
        if let Some(p) = &self.pairs {
            let _ = writeln!(s, "pairs = {}", p.join(","));
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "selection = {}", self.selection.name());
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "max_decode_len = {}", self.max_decode_len);
        if let Some(l) = self.train_limit {
            let _ = writeln!(s, "train_limit = {l}");
        }
        if let Some(l) = self.eval_limit {
            let _ = writeln!(s, "eval_limit = {l}");
        }
        let m = &self.model;
        let _ = writeln!(
            s,
            "\n[model]\nnum_layers = {}\nnum_heads = {}\nd_model = {}\nd_ff = {}\nmax_seq_len = {}\ndropout_rate = {:?}",
            m.num_layers, m.num_heads, m.d_model, m.d_ff, m.max_seq_len, m.dropout_rate
        );
        let kv = |s: &mut String, prefix: &str, c: &TrainConfig| {
            for line in c.to_text().lines() {
                let (k, v) = line.split_once('=').unwrap();
                let _ = writeln!(s, "{prefix}{k} = {v}");
            }
        };
        for b in &self.bases {
            let _ = writeln!(s, "\n[base {}]\nkind = {}\npairs = {}", b.name, b.kind.name(), b.pairs.join(","));
            kv(&mut s, "", &b.train);
        }
        for st in &self.strategies {
            let _ = writeln!(s, "\n[strategy {}]\nkind = {}", st.name, st.strategy.kind_name());
            if let Some(b) = st.strategy.base() {
                let _ = writeln!(s, "base = {b}");
            }
            match &st.strategy {
                Strategy::IntermediateThenFinetune { combined, per_pair, .. } => {
                    kv(&mut s, "combined.", combined);
                    kv(&mut s, "per_pair.", per_pair);
                }
                other => kv(&mut s, "", other.final_stage()),
            }
        }
        s
    }

    pub fn base(&self, name: &str) -> Option<&BaseDef> {
        self.bases.iter().find(|b| b.name == name)
    }
}

/// The packaged replica plan: bases and strategies mirroring the four
/// submitted setups, plus a no-transfer row.
pub const REPLICA_PLAN: &str = include_str!("../../plans/replica.plan");
/// A seconds-scale variant of the replica plan for smoke runs.
pub const REPLICA_SMOKE_PLAN: &str = include_str!("../../plans/replica-smoke.plan");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packaged_plans_parse_and_round_trip() {
        for text in [REPLICA_PLAN, REPLICA_SMOKE_PLAN] {
            let p = ExperimentPlan::parse(text, "packaged", Path::new(".")).unwrap();
            let again = ExperimentPlan::parse(&p.to_text(), "canonical", Path::new(".")).unwrap();
            assert_eq!(again, p);
        }
    }

    #[test]
    fn stage_keys() {
        let p = ExperimentPlan::parse(
            "[base b]\nkind = multilingual\npairs = en,pt\n[strategy S]\nkind = intermediate\nbase = b\nlr = 0.01\ncombined.epochs = 2\nper_pair.epochs = 7\n",
            "t",
            Path::new("."),
        )
        .unwrap();
        match &p.strategies[0].strategy {
            Strategy::IntermediateThenFinetune { combined, per_pair, .. } => {
                assert_eq!((combined.epochs, per_pair.epochs), (2, 7));
                assert_eq!((combined.learning_rate, per_pair.learning_rate), (0.01, 0.01));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn invalid_plans() {
        let bad = [
            "",
            "[strategy S]\nkind = direct\nbase = nope\n",
            "[base b]\nkind = bilingual\npairs = en,pt\n[strategy S]\nkind = direct\nbase = b\n",
            "[base b]\nkind = multilingual\npairs = en,pt\n[strategy S]\nkind = bilingual\nbase = b\n",
            "[strategy S]\nkind = scratch\ncombined.epochs = 3\n",
            "[strategy S]\nkind = scratch\nbatch_size = 0\n",
            "[strategy S]\nkind = teleport\n",
            "bogus = 1\n[strategy S]\nkind = scratch\n",
            "[strategy S]\nkind = scratch\n[strategy S]\nkind = scratch\n",
            "[model]\nd_model = 30\n[strategy S]\nkind = scratch\n",
        ];
        for text in bad {
            assert!(ExperimentPlan::parse(text, "t", Path::new(".")).is_err(), "{text}");
        }
    }
}
