//! Packing a (source, summary) pair into one token stream with reset
//! positions and segment labels.
//!
//! ```text
//! S = [α, x₀ … x_m,   β, y₀ … y_k,   δ]
//! P = [0, 1 … m+1,    0, 1 … k+1,    k+2]   (δ at 0 with literal_delta_position)
//! Q = [σ, σ … σ,      τ, τ … τ,      τ]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{SpecialTokens, TokenId, TokenSeq};

/// Source (σ) or summary (τ) membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Source,
    Summary,
}

impl Segment {
    pub fn index(self) -> usize {
        match self {
            Segment::Source => 0,
            Segment::Summary => 1,
        }
    }
}

/// Truncation limits and layout switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceLimits {
    pub max_source_tokens: usize,
    pub max_summary_tokens: usize,
    pub context_len: usize,
    /// Give δ position 0 instead of continuing the summary positions.
    pub literal_delta_position: bool,
}

impl Default for SequenceLimits {
    fn default() -> Self {
        Self {
            max_source_tokens: 400,
            max_summary_tokens: 100,
            context_len: 1024,
            literal_delta_position: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTriple {
    pub tokens: TokenSeq,
    pub positions: Vec<usize>,
    pub segments: Vec<Segment>,
    /// Index of β in `tokens`.
    pub summary_start: usize,
    /// Summary tokens after β, excluding δ.
    pub summary_len: usize,
}

impl EncodedTriple {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Appends a generated summary token.
    pub fn push_summary_token(&mut self, token: TokenId) {
        let next_pos = self.positions.last().map_or(0, |p| p + 1);
        self.tokens.push(token);
        self.positions.push(next_pos);
        self.segments.push(Segment::Summary);
        self.summary_len += 1;
    }

    /// The first `len` elements, keeping the summary bookkeeping consistent.
    pub fn truncated(&self, len: usize) -> EncodedTriple {
        let len = len.min(self.len());
        EncodedTriple {
            tokens: self.tokens[..len].to_vec(),
            positions: self.positions[..len].to_vec(),
            segments: self.segments[..len].to_vec(),
            summary_start: self.summary_start,
            summary_len: len.saturating_sub(self.summary_start + 1).min(self.summary_len),
        }
    }
}

fn source_part(
    source: &[TokenId],
    keep: usize,
    specials: &SpecialTokens,
) -> (TokenSeq, Vec<usize>, Vec<Segment>) {
    let mut tokens = Vec::with_capacity(keep + 1);
    tokens.push(specials.source_start);
    tokens.extend_from_slice(&source[..keep]);
    let positions = (0..tokens.len()).collect();
    let segments = vec![Segment::Source; tokens.len()];
    (tokens, positions, segments)
}

/// `[α, x…, β, y…, δ]` for likelihood training.
///
/// Source and summary are cut to their limits first; if the result still
/// exceeds the context, the source loses tokens from the right.
pub fn build_training_triple(
    source: &[TokenId],
    summary: &[TokenId],
    limits: &SequenceLimits,
    specials: &SpecialTokens,
) -> Result<EncodedTriple> {
    let src_len = source.len().min(limits.max_source_tokens);
    let sum_len = summary.len().min(limits.max_summary_tokens);
    if src_len == 0 {
        return Err(Error::Data("empty source".into()));
    }
    if sum_len == 0 {
        return Err(Error::Data("empty summary".into()));
    }
    let room = limits.context_len.saturating_sub(sum_len + 3);
    if room == 0 {
        return Err(Error::Data(format!(
            "summary of {sum_len} tokens leaves no room for a source in context {}",
            limits.context_len
        )));
    }
    let keep = src_len.min(room);

    let (mut tokens, mut positions, mut segments) = source_part(source, keep, specials);
    let summary_start = tokens.len();
    tokens.push(specials.summary_start);
    tokens.extend_from_slice(&summary[..sum_len]);
    positions.extend(0..=sum_len);
    segments.extend(std::iter::repeat_n(Segment::Summary, sum_len + 1));
    tokens.push(specials.end);
    positions.push(if limits.literal_delta_position { 0 } else { sum_len + 1 });
    segments.push(Segment::Summary);

    Ok(EncodedTriple {
        tokens,
        positions,
        segments,
        summary_start,
        summary_len: sum_len,
    })
}

/// `[α, x…, β]`, the conditioning prefix for decoding. The source is cut so
/// that `max_summary_tokens` more tokens still fit in the context.
pub fn build_inference_prefix(
    source: &[TokenId],
    limits: &SequenceLimits,
    specials: &SpecialTokens,
) -> Result<EncodedTriple> {
    let src_len = source.len().min(limits.max_source_tokens);
    if src_len == 0 {
        return Err(Error::Data("empty source".into()));
    }
    let room = limits
        .context_len
        .saturating_sub(limits.max_summary_tokens + 2);
    if room == 0 {
        return Err(Error::Data(format!(
            "max summary length {} leaves no room for a source in context {}",
            limits.max_summary_tokens, limits.context_len
        )));
    }
    let keep = src_len.min(room);
    let (mut tokens, mut positions, mut segments) = source_part(source, keep, specials);
    let summary_start = tokens.len();
    tokens.push(specials.summary_start);
    positions.push(0);
    segments.push(Segment::Summary);
    Ok(EncodedTriple {
        tokens,
        positions,
        segments,
        summary_start,
        summary_len: 0,
    })
}
