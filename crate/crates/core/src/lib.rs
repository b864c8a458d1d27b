//! Mining pipeline for report collections with referenced key images.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`corpus`]: report ingestion, sentence segmentation, token
//!   normalization, vocabularies and bag-of-words documents.
//! - [`keyimage`]: key-image reference extraction (including abbreviated
//!   number ranges) and 3-sentence proximal context windows.
//! - [`lda`]: collapsed-Gibbs topic models, held-out perplexity, topic-count
//!   selection, sub-topic refinement, top keywords.
//! - [`embed`]: skip-gram word vectors trained with hierarchical softmax
//!   over a Huffman tree, plus cosine neighbor queries.
//! - [`termmine`]: disease lexicons, assertion/negation detection, bi-gram
//!   label mining and the frequency-filtered present/absent label space.
//! - [`classifier`]: feed-forward nets over fixed-length feature vectors
//!   with softmax or sigmoid cross-entropy heads, splits, transfer
//!   learning and top-k evaluation.
//! - [`keywordgen`]: final per-image interpretation: topic predictions,
//!   generated keywords via cosine matching, disease presence/absence.
//! - [`synth`]: deterministic generators and brute-force oracles used by
//!   tests and the acceptance suite.
//! - [`model_io`]: the shared versioned binary model container and the
//!   text formats for vectors and feature files.

pub mod classifier;
pub mod corpus;
pub mod embed;
pub mod keyimage;
pub mod keywordgen;
pub mod lda;
pub mod model_io;
pub mod synth;
pub mod termmine;
