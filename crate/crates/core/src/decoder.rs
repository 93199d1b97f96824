//! Greedy decoding and nucleus sampling with length-normalized reranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_logits, Inputs, ModelParams};
use crate::numerics::log_softmax_row;
use crate::sequence::{build_inference_prefix, EncodedTriple, SequenceLimits};
use crate::tokenizer::{SpecialTokens, TokenId, TokenSeq};

/// Anything that can score the next token after a prefix.
pub trait NextTokenModel {
    fn context_len(&self) -> usize;

    /// Unnormalized scores for the token following `prefix`.
    fn next_token_logits(&self, prefix: &EncodedTriple) -> Result<Vec<f64>>;
}

impl NextTokenModel for ModelParams {
    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn next_token_logits(&self, prefix: &EncodedTriple) -> Result<Vec<f64>> {
        let logits = forward_logits(self, Inputs::from(prefix))?;
        Ok(logits.row(logits.rows() - 1).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    /// Nucleus mass.
    pub p: f64,
    pub n_candidates: usize,
    pub max_summary_tokens: usize,
    pub max_source_tokens: usize,
    pub length_norm_power: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Nucleus,
            p: 0.3,
            n_candidates: 5,
            max_summary_tokens: 100,
            max_source_tokens: 400,
            length_norm_power: 0.6,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if self.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be at least 1".into()));
        }
        if self.max_summary_tokens == 0 {
            return Err(Error::Config("max_summary_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// A decoded summary. `tokens` excludes δ; `token_logprobs` includes δ's
/// when it was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: TokenSeq,
    pub token_logprobs: Vec<f64>,
    pub score: f64,
    /// Decoding stopped at a length limit before δ.
    pub truncated: bool,
}

/// `−Σ log p / k^power`, where `k` counts generated summary tokens without
/// δ. An empty summary scores `+∞`.
pub fn score_candidate(token_logprobs: &[f64], k: usize, length_norm_power: f64) -> f64 {
    if k == 0 {
        return f64::INFINITY;
    }
    -token_logprobs.iter().sum::<f64>() / (k as f64).powf(length_norm_power)
}

/// Keeps the smallest highest-probability set whose mass reaches `p` and
/// renormalizes it. Equal probabilities are ordered by ascending token id.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let order = sorted_by_probability(probs);
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    let mut kept = 0;
    for &i in &order {
        mass += probs[i];
        kept += 1;
        if mass >= p {
            break;
        }
    }
    for &i in &order[..kept] {
        out[i] = probs[i] / mass;
    }
    out
}

fn sorted_by_probability(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

enum Chooser {
    Greedy,
    Nucleus { p: f64, rng: Box<ChaCha8Rng> },
}

impl Chooser {
    fn choose(&mut self, probs: &[f64]) -> usize {
        match self {
            Chooser::Greedy => argmax(probs),
            Chooser::Nucleus { p, rng } => {
                let filtered = nucleus_filter(probs, *p);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = argmax(&filtered);
                for i in sorted_by_probability(&filtered) {
                    if filtered[i] <= 0.0 {
                        break;
                    }
                    last = i;
                    acc += filtered[i];
                    if u < acc {
                        return i;
                    }
                }
                last
            }
        }
    }
}

fn decode_with(
    model: &dyn NextTokenModel,
    prefix: &EncodedTriple,
    specials: &SpecialTokens,
    config: &DecodeConfig,
    mut chooser: Chooser,
) -> Result<Candidate> {
    let mut seq = prefix.clone();
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut truncated = true;
    while tokens.len() < config.max_summary_tokens && seq.len() <= model.context_len() {
        let logp = log_softmax_row(&model.next_token_logits(&seq)?);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let next = chooser.choose(&probs);
        logprobs.push(logp[next]);
        let id = next as TokenId;
        if id == specials.end {
            truncated = false;
            break;
        }
        tokens.push(id);
        seq.push_summary_token(id);
    }
    let score = score_candidate(&logprobs, tokens.len(), config.length_norm_power);
    Ok(Candidate {
        tokens,
        token_logprobs: logprobs,
        score,
        truncated,
    })
}

/// Appends the most probable token until δ or a length limit.
pub fn greedy_decode(
    model: &dyn NextTokenModel,
    prefix: &EncodedTriple,
    specials: &SpecialTokens,
    config: &DecodeConfig,
) -> Result<Candidate> {
    decode_with(model, prefix, specials, config, Chooser::Greedy)
}

/// Samples each token from the nucleus of the model distribution. Scores use
/// the unfiltered log-probabilities.
pub fn nucleus_decode(
    model: &dyn NextTokenModel,
    prefix: &EncodedTriple,
    specials: &SpecialTokens,
    config: &DecodeConfig,
    seed: u64,
) -> Result<Candidate> {
    let chooser = Chooser::Nucleus {
        p: config.p,
        rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
    };
    decode_with(model, prefix, specials, config, chooser)
}

/// Index of the lowest score; the earliest wins ties.
pub fn select_best(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.score < candidates[b].score) {
            best = Some(i);
        }
    }
    best
}

/// Every candidate produced for a source, plus the index of the winner.
pub fn summarize_candidates(
    model: &dyn NextTokenModel,
    source: &[TokenId],
    specials: &SpecialTokens,
    config: &DecodeConfig,
) -> Result<(Vec<Candidate>, usize)> {
    config.validate()?;
    let limits = SequenceLimits {
        max_source_tokens: config.max_source_tokens,
        max_summary_tokens: config.max_summary_tokens,
        context_len: model.context_len(),
        literal_delta_position: false,
    };
    let prefix = build_inference_prefix(source, &limits, specials)?;
    let candidates = match config.mode {
        DecodeMode::Greedy => vec![greedy_decode(model, &prefix, specials, config)?],
        DecodeMode::Nucleus => (0..config.n_candidates)
            .map(|i| nucleus_decode(model, &prefix, specials, config, config.seed.wrapping_add(i as u64)))
            .collect::<Result<_>>()?,
    };
    let best = select_best(&candidates).expect("at least one candidate");
    Ok((candidates, best))
}

/// Greedy: the single greedy decoding. Nucleus: the lowest-scoring of
/// `n_candidates` independent samples.
pub fn summarize(
    model: &dyn NextTokenModel,
    source: &[TokenId],
    specials: &SpecialTokens,
    config: &DecodeConfig,
) -> Result<Candidate> {
    let (mut candidates, best) = summarize_candidates(model, source, specials, config)?;
    Ok(candidates.swap_remove(best))
}
