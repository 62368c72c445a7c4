//! Cross-lingual named entity recognition.
//!
//! A BiLSTM-CRF tagger is trained on a source language. Text in a target
//! language is tagged zero-shot by mapping its word vectors into the source
//! embedding space with an orthogonal matrix fitted over a bilingual
//! dictionary.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: a small dense row-major matrix.
//! - [`embed`]: word vector files, normalization, subword composition and a
//!   skip-gram trainer with negative sampling.
//! - [`align`]: one-sided Jacobi SVD and orthogonal Procrustes fitting.
//! - [`net`]: BiLSTM forward and backward passes.
//! - [`crf`]: linear-chain CRF inference and likelihood gradients.
//! - [`corpus`]: IOB label schemes and CoNLL-style corpora.
//! - [`tagger`]: model assembly, training, tagging and model files.
//! - [`eval`]: precision/recall/F1, ROC curves and report rendering.
//! - [`synth`]: deterministic synthetic corpora and embedding spaces.

pub mod align;
pub mod corpus;
pub mod crf;
pub mod embed;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod net;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used by every stochastic component.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
