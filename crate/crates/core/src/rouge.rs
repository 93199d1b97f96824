//! ROUGE-1, ROUGE-2 and ROUGE-L (sentence-level LCS), F1 variants.
//!
//! Tokenization: lowercase, split on runs of non-alphanumeric characters.
//! No stemming and no stopword removal, so scores are not directly
//! comparable with the official toolkit's stemmed numbers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let precision = if candidate_total > 0 {
            overlap as f64 / candidate_total as f64
        } else {
            0.0
        };
        let recall = if reference_total > 0 {
            overlap as f64 / reference_total as f64
        } else {
            0.0
        };
        Self::from_pr(precision, recall)
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap on pre-tokenized input.
pub fn rouge_n_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        cand.values().sum(),
        refs.values().sum(),
    )
}

/// ROUGE-N for `n` in {1, 2}.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeScore> {
    if !(1..=2).contains(&n) {
        return Err(Error::Config(format!("ROUGE-N supports n = 1 or 2, got {n}")));
    }
    Ok(rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

/// The three metrics for one candidate/reference pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn score_pair(candidate: &str, reference: &str) -> RougeTriple {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    RougeTriple {
        rouge1: rouge_n_tokens(&c, &r, 1),
        rouge2: rouge_n_tokens(&c, &r, 2),
        rouge_l: rouge_l_tokens(&c, &r),
    }
}

fn mean(scores: impl Iterator<Item = RougeScore>, n: f64) -> RougeScore {
    let sum = scores.fold(RougeScore::default(), |acc, s| RougeScore {
        precision: acc.precision + s.precision,
        recall: acc.recall + s.recall,
        f1: acc.f1 + s.f1,
    });
    RougeScore {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    }
}

/// Arithmetic mean of per-pair precision, recall and F1 for each metric.
pub fn corpus_rouge<C: AsRef<str>, R: AsRef<str>>(pairs: &[(C, R)]) -> Result<RougeTriple> {
    if pairs.is_empty() {
        return Err(Error::Config("corpus ROUGE needs at least one pair".into()));
    }
    let scored: Vec<RougeTriple> = pairs
        .iter()
        .map(|(c, r)| score_pair(c.as_ref(), r.as_ref()))
        .collect();
    Ok(aggregate(&scored))
}

/// Mean of already-scored pairs. Panics on an empty slice.
pub fn aggregate(scored: &[RougeTriple]) -> RougeTriple {
    let n = scored.len() as f64;
    RougeTriple {
        rouge1: mean(scored.iter().map(|s| s.rouge1), n),
        rouge2: mean(scored.iter().map(|s| s.rouge2), n),
        rouge_l: mean(scored.iter().map(|s| s.rouge_l), n),
    }
}
