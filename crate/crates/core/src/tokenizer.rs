//! Byte-level BPE.
//!
//! Text is split into pre-tokens at whitespace; a word that follows a single
//! space keeps that space as its first byte, which acts as the word-boundary
//! marker (rendered `▁` in the vocabulary file). Every byte has a base
//! token, so encoding never fails and `decode(encode(s)) == s` for any
//! input.
//!
//! Id layout: `0..4` control tokens, `4..260` raw bytes, then learned merges.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

pub const PAD: TokenId = 0;
pub const SOURCE_START: TokenId = 1;
pub const SUMMARY_START: TokenId = 2;
pub const END: TokenId = 3;

const SPECIAL_NAMES: [&str; 4] = ["pad", "src", "sum", "eos"];
const BYTE_OFFSET: TokenId = SPECIAL_NAMES.len() as TokenId;
/// Specials plus the 256 byte symbols.
pub const BASE_VOCAB_SIZE: usize = SPECIAL_NAMES.len() + 256;
const MIN_PAIR_COUNT: usize = 2;
const HEADER: &str = "dtrf-bpe v1";
const MERGES_SENTINEL: &str = "#merges";

/// Control-token ids: α opens the source, β opens the summary, δ ends the
/// sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: TokenId,
    pub source_start: TokenId,
    pub summary_start: TokenId,
    pub end: TokenId,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            pad: PAD,
            source_start: SOURCE_START,
            summary_start: SUMMARY_START,
            end: END,
        }
    }
}

impl SpecialTokens {
    pub fn contains(&self, id: TokenId) -> bool {
        id == self.pad || id == self.source_start || id == self.summary_start || id == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Special(&'static str),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<Piece>,
    index: HashMap<Vec<u8>, TokenId>,
    specials: SpecialTokens,
}

impl Vocabulary {
    fn base() -> Self {
        let mut pieces: Vec<Piece> = SPECIAL_NAMES.iter().map(|n| Piece::Special(n)).collect();
        let mut index = HashMap::new();
        for b in 0..=255u8 {
            index.insert(vec![b], pieces.len() as TokenId);
            pieces.push(Piece::Bytes(vec![b]));
        }
        Self {
            pieces,
            index,
            specials: SpecialTokens::default(),
        }
    }

    fn push_or_get(&mut self, bytes: Vec<u8>) -> TokenId {
        if let Some(&id) = self.index.get(&bytes) {
            return id;
        }
        let id = self.pieces.len() as TokenId;
        self.index.insert(bytes.clone(), id);
        self.pieces.push(Piece::Bytes(bytes));
        id
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn specials(&self) -> SpecialTokens {
        self.specials
    }

    /// Bytes of a non-special token.
    pub fn bytes_of(&self, id: TokenId) -> Option<&[u8]> {
        match self.pieces.get(id as usize)? {
            Piece::Bytes(b) => Some(b),
            Piece::Special(_) => None,
        }
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.index.get(bytes).copied()
    }

    /// Printable form of a token as it appears in the vocabulary file.
    pub fn display(&self, id: TokenId) -> Option<String> {
        self.pieces.get(id as usize).map(render_piece)
    }

    pub fn byte_token(b: u8) -> TokenId {
        BYTE_OFFSET + b as TokenId
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub result: TokenId,
}

/// Ordered merges; rank is the list index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<Merge>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

impl MergeTable {
    fn push(&mut self, merge: Merge) -> Result<()> {
        let key = (merge.left, merge.right);
        if self.ranks.contains_key(&key) {
            return Err(Error::Data(format!(
                "duplicate merge ({}, {})",
                merge.left, merge.right
            )));
        }
        self.ranks.insert(key, self.merges.len());
        self.merges.push(merge);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    fn rank(&self, left: TokenId, right: TokenId) -> Option<usize> {
        self.ranks.get(&(left, right)).copied()
    }
}

fn is_space(b: u8) -> bool {
    b.is_ascii_whitespace() || b == 0x0b
}

/// Splits text into pre-tokens whose concatenation is the input.
pub fn pretokenize(text: &[u8]) -> Vec<&[u8]> {
    let n = text.len();
    let mut out = Vec::new();
    let mut i = 0;
    let word_end = |from: usize| (from..n).find(|&k| is_space(text[k])).unwrap_or(n);
    while i < n {
        if is_space(text[i]) {
            let j = (i..n).find(|&k| !is_space(text[k])).unwrap_or(n);
            if j < n && text[j - 1] == b' ' {
                if j - 1 > i {
                    out.push(&text[i..j - 1]);
                }
                let k = word_end(j);
                out.push(&text[j - 1..k]);
                i = k;
            } else {
                out.push(&text[i..j]);
                i = j;
            }
        } else {
            let k = word_end(i);
            out.push(&text[i..k]);
            i = k;
        }
    }
    out
}

/// Greedy left-to-right replacement of every `(left, right)` occurrence.
fn merge_pair(symbols: &mut Vec<TokenId>, left: TokenId, right: TokenId, result: TokenId) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(result);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    *symbols = out;
}

/// A learned vocabulary together with its merge table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub merges: MergeTable,
}

/// Learns BPE merges until the vocabulary reaches `target_vocab_size` or no
/// adjacent pair occurs at least twice.
///
/// Each round merges the most frequent adjacent pair; ties go to the
/// lexicographically smallest `(left, right)` byte strings.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize) -> Result<Tokenizer> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot learn BPE from an empty corpus".into()));
    }
    if target_vocab_size < BASE_VOCAB_SIZE {
        return Err(Error::Config(format!(
            "target vocabulary size {target_vocab_size} is below the {BASE_VOCAB_SIZE} base symbols"
        )));
    }

    let mut word_counts: HashMap<&[u8], usize> = HashMap::new();
    for text in corpus {
        for word in pretokenize(text.as_ref().as_bytes()) {
            *word_counts.entry(word).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<TokenId>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| Vocabulary::byte_token(b)).collect(), c))
        .collect();
    words.sort();

    let mut vocab = Vocabulary::base();
    let mut merges = MergeTable::default();
    while vocab.len() < target_vocab_size {
        let mut pair_counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|&(_, c)| c >= MIN_PAIR_COUNT)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (vocab.bytes_of(pa.0), vocab.bytes_of(pa.1));
                    let kb = (vocab.bytes_of(pb.0), vocab.bytes_of(pb.1));
                    kb.cmp(&ka)
                })
            });
        let Some(((left, right), _)) = best else { break };

        let mut joined = vocab.bytes_of(left).unwrap_or_default().to_vec();
        joined.extend_from_slice(vocab.bytes_of(right).unwrap_or_default());
        let result = vocab.push_or_get(joined);
        merges.push(Merge {
            left,
            right,
            result,
        })?;
        for (symbols, _) in &mut words {
            merge_pair(symbols, left, right, result);
        }
    }
    Ok(Tokenizer { vocab, merges })
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn specials(&self) -> SpecialTokens {
        self.vocab.specials
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, text: &[u8]) -> TokenSeq {
        let mut out = Vec::with_capacity(text.len());
        for word in pretokenize(text) {
            let mut symbols: Vec<TokenId> = word.iter().map(|&b| Vocabulary::byte_token(b)).collect();
            while symbols.len() > 1 {
                let best = symbols
                    .windows(2)
                    .filter_map(|w| self.merges.rank(w[0], w[1]))
                    .min();
                let Some(rank) = best else { break };
                let m = self.merges.merges[rank];
                merge_pair(&mut symbols, m.left, m.right, m.result);
            }
            out.extend(symbols);
        }
        out
    }

    /// Raw bytes of a token sequence; control tokens are dropped.
    pub fn decode_bytes(&self, tokens: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in tokens {
            match self.vocab.pieces.get(id as usize) {
                Some(Piece::Bytes(b)) => out.extend_from_slice(b),
                Some(Piece::Special(_)) => {}
                None => {
                    return Err(Error::Data(format!(
                        "token id {id} out of range for vocabulary of {}",
                        self.vocab.len()
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Text of a token sequence. Invalid UTF-8 (possible for model output
    /// that splits a multi-byte character) is replaced with U+FFFD.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(tokens)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} {}\n", self.vocab.len());
        for piece in &self.vocab.pieces {
            out.push_str(&render_piece(piece));
            out.push('\n');
        }
        out.push_str(MERGES_SENTINEL);
        out.push('\n');
        for m in &self.merges.merges {
            let left = self.vocab.bytes_of(m.left).unwrap_or_default();
            let right = self.vocab.bytes_of(m.right).unwrap_or_default();
            let _ = writeln!(out, "{}\t{}", escape_bytes(left), escape_bytes(right));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty vocabulary file".into()))?;
        let size: usize = header
            .strip_prefix(HEADER)
            .map(str::trim)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("bad vocabulary header {header:?}")))?;
        if size < BASE_VOCAB_SIZE {
            return Err(Error::Data(format!(
                "vocabulary size {size} below base size {BASE_VOCAB_SIZE}"
            )));
        }

        let mut vocab = Vocabulary::base();
        for id in 0..size {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("vocabulary ends before entry {id}")))?;
            if id < BASE_VOCAB_SIZE {
                if line != render_piece(&vocab.pieces[id]) {
                    return Err(Error::Data(format!(
                        "base entry {id} is {line:?}, expected {:?}",
                        render_piece(&vocab.pieces[id])
                    )));
                }
                continue;
            }
            let bytes = unescape(line)?;
            if vocab.index.contains_key(&bytes) {
                return Err(Error::Data(format!("duplicate subword {line:?}")));
            }
            vocab.push_or_get(bytes);
        }
        match lines.next() {
            Some(MERGES_SENTINEL) => {}
            other => {
                return Err(Error::Data(format!(
                    "expected {MERGES_SENTINEL:?} after {size} entries, found {other:?}"
                )))
            }
        }

        let mut merges = MergeTable::default();
        for (n, line) in lines.enumerate() {
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("merge {n}: missing tab in {line:?}")))?;
            let lb = unescape(l)?;
            let rb = unescape(r)?;
            let lookup = |b: &[u8]| {
                vocab.id_of(b).ok_or_else(|| {
                    Error::Data(format!("merge {n}: {:?} is not in the vocabulary", escape_bytes(b)))
                })
            };
            let left = lookup(&lb)?;
            let right = lookup(&rb)?;
            let joined = [lb, rb].concat();
            let result = lookup(&joined)?;
            merges.push(Merge {
                left,
                right,
                result,
            })?;
        }
        Ok(Self { vocab, merges })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn render_piece(piece: &Piece) -> String {
    match piece {
        Piece::Special(name) => format!("\\<{name}>"),
        Piece::Bytes(b) => escape_bytes(b),
    }
}

fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b' ' => out.push('▁'),
            b'\\' => out.push_str("\\\\"),
            b'#' => out.push_str("\\x23"),
            0x21..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out
}

fn unescape(s: &str) -> Result<Vec<u8>> {
    let bad = || Error::Data(format!("bad escape in vocabulary entry {s:?}"));
    let mut out = Vec::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '▁' => out.push(b' '),
            '\\' => match chars.next() {
                Some('\\') => out.push(b'\\'),
                Some('x') => {
                    let hex: String = chars.by_ref().take(2).collect();
                    if hex.len() != 2 {
                        return Err(bad());
                    }
                    out.push(u8::from_str_radix(&hex, 16).map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            },
            c if c.is_ascii_graphic() && c != '#' => out.push(c as u8),
            _ => return Err(bad()),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(t: &Tokenizer, s: &str) -> TokenId {
        t.vocab.id_of(s.as_bytes()).unwrap()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let t = learn_bpe(&["aaabdaaabac"], BASE_VOCAB_SIZE + 1).unwrap();
        assert_eq!(t.merges.len(), 1);
        let m = t.merges.merges()[0];
        assert_eq!((m.left, m.right), (tok(&t, "a"), tok(&t, "a")));
        let z = tok(&t, "aa");
        let (a, b, c, d) = (tok(&t, "a"), tok(&t, "b"), tok(&t, "c"), tok(&t, "d"));
        assert_eq!(t.encode("aaabdaaabac"), vec![z, a, b, d, z, a, b, a, c]);
        assert_eq!(t.encode("aaab"), vec![z, a, b]);
    }

    #[test]
    fn single_character_corpus_learns_nothing() {
        let t = learn_bpe(&["x"], 1000).unwrap();
        assert!(t.merges.is_empty());
        assert_eq!(t.vocab_size(), BASE_VOCAB_SIZE);
    }

    #[test]
    fn configuration_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(learn_bpe(&empty, 1000), Err(Error::Config(_))));
        assert!(matches!(learn_bpe(&["abc"], 100), Err(Error::Config(_))));
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" both occur twice; ("a","b") < ("c","d").
        let t = learn_bpe(&["cd", "ab", "cd", "ab"], BASE_VOCAB_SIZE + 1).unwrap();
        let m = t.merges.merges()[0];
        assert_eq!((m.left, m.right), (tok(&t, "a"), tok(&t, "b")));
    }

    #[test]
    fn empty_text() {
        let t = learn_bpe(&["hello world"], 300).unwrap();
        assert!(t.encode("").is_empty());
        assert_eq!(t.decode(&[]).unwrap(), "");
    }

    #[test]
    fn decode_skips_controls_and_rejects_bad_ids() {
        let t = learn_bpe(&["hello world hello"], 300).unwrap();
        let mut ids = t.encode("hello");
        ids.push(END);
        ids.insert(0, SOURCE_START);
        assert_eq!(t.decode(&ids).unwrap(), "hello");
        assert!(matches!(t.decode(&[9999]), Err(Error::Data(_))));
    }

    #[test]
    fn pretokens_cover_input() {
        let text = b"  the cat\tsat \n on  mat ";
        let parts = pretokenize(text);
        assert_eq!(parts.concat(), text.to_vec());
        assert!(parts.contains(&&b" cat"[..]));
        assert!(parts.contains(&&b" mat"[..]));
    }

    #[test]
    fn words_become_single_tokens() {
        let corpus: Vec<String> = (0..20).map(|_| "river stone river stone".to_string()).collect();
        let t = learn_bpe(&corpus, 2000).unwrap();
        assert_eq!(t.encode(" river").len(), 1);
        assert_eq!(t.encode("river stone").len(), 2);
    }

    #[test]
    fn text_file_roundtrip() {
        let t = learn_bpe(&["a#b a#b \\x \\x tab\there tab\there ünï ünï"], 400).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("dtrf-bpe v1 "));
        let back = Tokenizer::from_text(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let t = learn_bpe(&["abab abab"], 300).unwrap();
        let text = t.to_text().replace("#merges", "#mergez");
        assert!(Tokenizer::from_text(&text).is_err());
    }
}
