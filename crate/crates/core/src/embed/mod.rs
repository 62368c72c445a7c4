//! Word embeddings: loading, normalization, lookup with subword fallback,
//! nearest-neighbour retrieval and a small skip-gram trainer.

mod ngrams;
mod skipgram;
mod store;

pub use ngrams::{char_ngrams, char_ngrams_with};
pub use skipgram::{
    skipgram_neg_objective, train_skipgram, NegSample, SkipgramConfig, SkipgramGradient,
    SkipgramModel,
};
pub use store::{
    load_embeddings, load_ngram_table, write_embeddings, write_ngram_table, EmbeddingStore,
    NgramTable,
};
