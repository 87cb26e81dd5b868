//! Annotation pipeline for antisocial behavior in social-media corpora.
//!
//! The crate ingests archived line-delimited JSON post streams, builds an
//! antisocial keyword lexicon (merged source lists, stoplist removal,
//! reference-corpus frequency filtering), trains skip-gram word embeddings to
//! expand that lexicon by cosine similarity, labels every record with a
//! multi-pattern token matcher and a thresholded toxicity scorer, fuses the
//! two labels with a union rule, and exports the downstream analyses:
//! high-frequency antisocial n-grams, target-word neighbor graphs, and the
//! daily antisocial-proportion series with spike flags.
//!
//! Each stage is usable on its own; see the `examples/` directory for one
//! runnable program per capability, or the `antisocial` binary for the
//! end-to-end pipeline.

pub mod analysis;
pub mod combiner;
pub mod corpus;
pub mod embedding;
pub mod label;
pub mod lexicon;
pub mod matcher;
pub mod pipeline;
pub mod toxicity;

pub use label::{Label, ToxicityLabel};
