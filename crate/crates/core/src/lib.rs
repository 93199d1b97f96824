//! Abstractive summarization as plain language modeling.
//!
//! A source document and its summary are packed into one token stream
//! `[α, x.., β, y.., δ]` with positions that restart at the summary and a
//! learned source/summary segment embedding. A small decoder-only
//! transformer is trained on that stream by maximum likelihood, and
//! summaries are produced by greedy decoding or by nucleus sampling with
//! length-normalized reranking. ROUGE-1/2/L measure the result.
//!
//! ```text
//! text ──tokenizer──▶ ids ──sequence──▶ (S, P, Q) ──model──▶ next-token probs
//!                                           │                      │
//!                                        trainer               decoder ──▶ rouge
//! ```

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod rouge;
pub mod sequence;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
