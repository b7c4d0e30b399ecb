//! Desk-scale laboratory for transfer learning in low-resource machine
//! translation: a tape autodiff engine, a small encoder-decoder transformer,
//! byte-level BPE with language tags, chrF, synthetic related-language
//! corpora, and a resumable two-phase experiment harness.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod model;
pub mod metrics;
pub mod corpus;
pub mod training;
pub mod harness;
