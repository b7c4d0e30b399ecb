//! A scaled-down stand-in for the shared-task data: one high-resource pair
//! (the bilingual pretraining direction) and six low-resource pairs whose
//! train sizes keep the original's rough shape: one large, four mid-sized,
//! one tiny.
//!
//! | code | role          | train | dev | test | lexicon overlap with `en` |
//! |------|---------------|-------|-----|------|---------------------------|
//! | en   | high-resource | 5000  | 100 | 100  | -                         |
//! | quy  | large         | 2000  | 100 | 100  | 0.5                       |
//! | aym  | mid           | 500   | 100 | 100  | 0.5                       |
//! | bzd  | mid           | 500   | 100 | 100  | 0.4                       |
//! | cni  | mid           | 500   | 100 | 100  | 0.4                       |
//! | shp  | mid           | 500   | 100 | 100  | 0.3                       |
//! | czn  | tiny          | 50    | 100 | 100  | 0.5                       |
//!
//! The multilingual pretraining set adds a second high-resource direction,
//! `pt` (2500 / 100 / 100, overlap 0.5 with `en`).

use super::{generate_synth_pair, template_sentences, CorpusError, ParallelCorpus, SynthLangSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaPair {
    pub code: &'static str,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Lexicon overlap with the high-resource language; `None` for the root.
    pub overlap: Option<f64>,
}

pub const REPLICA_TABLE: [ReplicaPair; 7] = [
    ReplicaPair { code: "en", train: 5000, dev: 100, test: 100, overlap: None },
    ReplicaPair { code: "quy", train: 2000, dev: 100, test: 100, overlap: Some(0.5) },
    ReplicaPair { code: "aym", train: 500, dev: 100, test: 100, overlap: Some(0.5) },
    ReplicaPair { code: "bzd", train: 500, dev: 100, test: 100, overlap: Some(0.4) },
    ReplicaPair { code: "cni", train: 500, dev: 100, test: 100, overlap: Some(0.4) },
    ReplicaPair { code: "shp", train: 500, dev: 100, test: 100, overlap: Some(0.3) },
    ReplicaPair { code: "czn", train: 50, dev: 100, test: 100, overlap: Some(0.5) },
];

const SECOND_PRETRAIN: ReplicaPair = ReplicaPair { code: "pt", train: 2500, dev: 100, test: 100, overlap: Some(0.5) };

fn root_spec(seed: u64) -> SynthLangSpec {
    SynthLangSpec::random("en", seed)
}

fn build(seed: u64, entries: &[ReplicaPair]) -> Result<Vec<ParallelCorpus>, CorpusError> {
    let root = root_spec(seed);
    let sentences = template_sentences();
    entries
        .iter()
        .map(|e| {
            let spec = match e.overlap {
                None => root.clone(),
                Some(rho) => SynthLangSpec::related(&root, rho, e.code, seed),
            };
            generate_synth_pair(&spec, &sentences, (e.train, e.dev, e.test))
        })
        .collect()
}

/// High-resource pair first, then the six low-resource pairs in table order.
pub fn make_shared_task_replica(seed: u64) -> Vec<ParallelCorpus> {
    build(seed, &REPLICA_TABLE).expect("replica sizes fit the template list")
}

/// The two high-resource directions used to pretrain the multilingual base.
pub fn make_multilingual_pretraining_pairs(seed: u64) -> Vec<ParallelCorpus> {
    build(seed, &[REPLICA_TABLE[0], SECOND_PRETRAIN]).expect("pretraining sizes fit the template list")
}
