//! Source/summary pairs: JSONL I/O, deterministic splits and synthetic
//! tasks for desk-scale runs.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub source: String,
    pub summary: String,
}

impl PairRecord {
    pub fn new(id: impl Into<String>, source: impl Into<String>, summary: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            summary: summary.into(),
        }
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::Data(format!("line {line}: key \"{key}\" is not a string"))),
        None => Err(Error::Data(format!("line {line}: missing key \"{key}\""))),
    }
}

/// Parses JSONL pairs. Blank lines are skipped; a missing `id` becomes the
/// 1-based line number.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {line_no}: malformed JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(Error::Data(format!("line {line_no}: expected a JSON object")));
        };
        let source = string_field(&obj, "source", line_no)?;
        let summary = string_field(&obj, "summary", line_no)?;
        let id = match obj.get("id") {
            None | Some(Value::Null) => line_no.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
        };
        if source.trim().is_empty() || summary.trim().is_empty() {
            return Err(Error::Data(format!(
                "line {line_no}: source and summary must be non-empty"
            )));
        }
        out.push(PairRecord {
            id,
            source,
            summary,
        });
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<PairRecord>> {
    let file = std::fs::File::open(path)?;
    parse_jsonl(BufReader::new(file))
}

pub fn write_jsonl(mut w: impl Write, records: &[PairRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Train / validation / test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<PairRecord>,
    pub val: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
}

/// Shuffles with `seed` and cuts at the rounded fractions; the test split
/// takes whatever remains.
pub fn split(records: &[PairRecord], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| f.is_nan() || *f <= 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(Splits {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

/// A small fixed English word list for synthetic data.
pub const COMMON_WORDS: [&str; 96] = [
    "time", "year", "people", "way", "day", "man", "thing", "woman", "life", "child", "world",
    "school", "state", "family", "student", "group", "country", "problem", "hand", "part",
    "place", "case", "week", "company", "system", "program", "question", "work", "government",
    "number", "night", "point", "home", "water", "room", "mother", "area", "money", "story",
    "fact", "month", "lot", "right", "study", "book", "eye", "job", "word", "business", "issue",
    "side", "kind", "head", "house", "service", "friend", "father", "power", "hour", "game",
    "line", "end", "member", "law", "car", "city", "community", "name", "president", "team",
    "minute", "idea", "kid", "body", "information", "back", "parent", "face", "others", "level",
    "office", "door", "health", "person", "art", "war", "history", "party", "result", "change",
    "morning", "reason", "research", "girl", "guy", "moment",
];

fn check_synth_args(
    source_len_range: (usize, usize),
    summary_len: usize,
    words: &[&str],
) -> Result<()> {
    let (lo, hi) = source_len_range;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!(
            "invalid source length range {lo}..={hi}"
        )));
    }
    if summary_len == 0 || summary_len > lo {
        return Err(Error::Config(format!(
            "summary length {summary_len} must be in 1..={lo}"
        )));
    }
    if words.is_empty() {
        return Err(Error::Config("synthetic tasks need a non-empty word list".into()));
    }
    Ok(())
}

/// Sources are uniformly random words; each summary is the first
/// `summary_len` words of its source.
pub fn synth_copy_task(
    n_examples: usize,
    source_len_range: (usize, usize),
    summary_len: usize,
    words: &[&str],
    seed: u64,
) -> Result<Vec<PairRecord>> {
    check_synth_args(source_len_range, summary_len, words)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_examples)
        .map(|i| {
            let len = rng.random_range(source_len_range.0..=source_len_range.1);
            let src: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            PairRecord::new(
                format!("copy-{i:05}"),
                src.join(" "),
                src[..summary_len].join(" "),
            )
        })
        .collect())
}

/// Sources draw word `i` with weight `1/(i+1)`; each summary is the `k`
/// rarest words of its source (highest list index, earliest occurrence
/// first among equals), kept in source order.
pub fn synth_keyword_task(
    n_examples: usize,
    source_len_range: (usize, usize),
    k: usize,
    words: &[&str],
    seed: u64,
) -> Result<Vec<PairRecord>> {
    check_synth_args(source_len_range, k, words)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..words.len()).map(|i| 1.0 / (i + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let draw = |rng: &mut ChaCha8Rng| {
        let mut u = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    };
    Ok((0..n_examples)
        .map(|i| {
            let len = rng.random_range(source_len_range.0..=source_len_range.1);
            let src: Vec<usize> = (0..len).map(|_| draw(&mut rng)).collect();
            let mut by_rarity: Vec<usize> = (0..len).collect();
            by_rarity.sort_by(|&a, &b| src[b].cmp(&src[a]).then(a.cmp(&b)));
            let mut keep = by_rarity[..k].to_vec();
            keep.sort_unstable();
            let text = |idx: &mut dyn Iterator<Item = usize>| {
                idx.map(|j| words[j]).collect::<Vec<_>>().join(" ")
            };
            PairRecord::new(
                format!("keyword-{i:05}"),
                text(&mut src.iter().copied()),
                text(&mut keep.iter().map(|&p| src[p])),
            )
        })
        .collect())
}
