//! Learnability-driven online batch selection for parallel-corpus fine-tuning.
//!
//! A super-batch of sentence pairs is embedded by a fixed reference encoder
//! and by the learner being trained. The two cross-similarity matrices are
//! combined into a learnability matrix, and a sub-batch is drawn from it
//! chunk by chunk ([`selector::joint_select`]). Reference embeddings are
//! persisted in a content-addressed [`cache`]; [`pipeline`] streams a corpus
//! through the whole process and accounts for its compute; [`simlab`] is a
//! synthetic harness for comparing strategies.

// `!(x <= bound)` checks are deliberate: they also reject NaN.
// Index loops over square matrices read more clearly than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cache;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod selector;
pub mod simlab;
pub mod types;

pub use error::{Error, Result};
pub use scoring::{
    easy_reference_scores, hard_learner_scores, learnability_matrix, score_histogram, similarity_matrix,
    HistogramAccumulator, ScoreHistogram, SimilarityMatrix,
};
pub use selector::{
    conditional_scores, gumbel_topk, gumbel_topk_tempered, iid_select, joint_select, n_draws, pass_through, select,
    topk_individual_select, SampledMask, Strategy,
};
pub use types::{
    normalize_rows, Chunk0Policy, ContentHash, EmbeddingMatrix, LearnabilityMatrix, PairRecord, ScoreWeights,
    SelectionConfig, SelectionCounters, SelectionResult, Side, SquareMatrix,
};
