//! Command-line front end. Every command writes JSON to the supplied
//! writer and returns a process exit code.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::corpus::{self, PairRecord, COMMON_WORDS};
use crate::decoder::{summarize, Candidate, DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::gradcheck::check_sequence_nll;
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::rouge::{self, RougeTriple};
use crate::sequence::{build_training_triple, EncodedTriple, SequenceLimits};
use crate::tokenizer::{learn_bpe, Tokenizer};
use crate::trainer::{self, TrainConfig};

/// Everything a run needs, loadable from one JSON document. Missing fields
/// take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub sequence: SequenceLimits,
    pub tokenizer_vocab_size: Option<usize>,
    pub tokenizer_path: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Applies `--seed` to every random stream.
    fn set_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
            self.decode.seed = s;
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dtrf", version, about = "Summarization as language modeling with a decoder-only transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a BPE vocabulary from a text file (one document per line) or a JSONL pair file.
    LearnBpe(LearnBpeArgs),
    /// Generate a synthetic pair dataset as JSONL.
    Synth(SynthArgs),
    /// Shuffle and split a JSONL pair file into train/val/test files.
    Split(SplitArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Summarize documents; prints one JSON object per input.
    Summarize(SummarizeArgs),
    /// Score summaries with ROUGE-1/2/L and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Check backpropagated gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct LearnBpeArgs {
    /// Corpus file: `.jsonl` pairs (source and summary both used) or plain text lines (required)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Target vocabulary size including control and byte tokens
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    /// Output vocabulary file (required)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthTask {
    Copy,
    Keyword,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Task: summary is the source prefix (copy) or its rarest words (keyword)
    #[arg(long, value_enum, default_value_t = SynthTask::Copy)]
    pub task: SynthTask,
    /// Number of pairs
    #[arg(long, default_value_t = 2300)]
    pub n: usize,
    /// Minimum source length in words
    #[arg(long, default_value_t = 6)]
    pub min_len: usize,
    /// Maximum source length in words
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Summary length in words
    #[arg(long, default_value_t = 4)]
    pub summary_len: usize,
    /// How many words of the built-in word list to draw from
    #[arg(long, default_value_t = 96)]
    pub words: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL file (required)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Input JSONL pair file (required)
    #[arg(long)]
    pub input: PathBuf,
    /// Train, validation and test fractions
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub fractions: Vec<f64>,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train.jsonl, val.jsonl and test.jsonl (required)
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Model and training overrides. Unset flags keep the config-file value.
#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Run configuration JSON [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Vocabulary file from learn-bpe [default: config tokenizer_path]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Training pairs JSONL [default: config train_path]
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation pairs JSONL [default: config val_path]
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Output checkpoint (required)
    #[arg(long)]
    pub out: PathBuf,
    /// Training log, one JSON object per evaluation [default: none]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Seed for initialization and data order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [default: 5e-5]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Sequences per batch [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum optimizer steps [default: 2000]
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Steps between validation passes [default: 100]
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Evaluations without improvement before stopping [default: 3]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Transformer blocks [default: 2]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Model width [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Context length in tokens [default: 128]
    #[arg(long)]
    pub context_len: Option<usize>,
    /// Source truncation limit in tokens [default: 400]
    #[arg(long)]
    pub max_source_tokens: Option<usize>,
    /// Summary truncation limit in tokens [default: 100]
    #[arg(long)]
    pub max_summary_tokens: Option<usize>,
    /// Drop the source/summary segment embedding [default: false]
    #[arg(long)]
    pub no_segment_embedding: bool,
    /// Give δ position 0 instead of continuing the summary positions [default: false]
    #[arg(long)]
    pub literal_delta_position: bool,
    /// Score only tokens after β [default: false]
    #[arg(long)]
    pub summary_only_loss: bool,
    /// Clip the global gradient norm to this value [default: no clipping]
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

/// Decoding overrides shared by summarize and evaluate.
#[derive(Debug, Args, Default, Clone)]
pub struct DecodeArgs {
    /// Run configuration JSON (decode section) [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for nucleus sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Decoding mode [default: nucleus]
    #[arg(long, value_enum)]
    pub mode: Option<DecodeMode>,
    /// Nucleus probability mass [default: 0.3]
    #[arg(long)]
    pub p: Option<f64>,
    /// Independent nucleus samples to rerank [default: 5]
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Maximum generated summary tokens [default: 100]
    #[arg(long)]
    pub max_summary_tokens: Option<usize>,
    /// Source truncation limit in tokens [default: 400]
    #[arg(long)]
    pub max_source_tokens: Option<usize>,
    /// Exponent of the length normalizer [default: 0.6]
    #[arg(long)]
    pub length_norm_power: Option<f64>,
}

impl DecodeArgs {
    fn resolve(&self) -> Result<DecodeConfig> {
        let mut run = RunConfig::load_or_default(self.config.as_deref())?;
        run.set_seed(self.seed);
        let mut d = run.decode;
        if let Some(v) = self.mode {
            d.mode = v;
        }
        if let Some(v) = self.p {
            d.p = v;
        }
        if let Some(v) = self.candidates {
            d.n_candidates = v;
        }
        if let Some(v) = self.max_summary_tokens {
            d.max_summary_tokens = v;
        }
        if let Some(v) = self.max_source_tokens {
            d.max_source_tokens = v;
        }
        if let Some(v) = self.length_norm_power {
            d.length_norm_power = v;
        }
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Model checkpoint (required)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file (required)
    #[arg(long)]
    pub vocab: PathBuf,
    /// JSONL file whose "source" fields are summarized [default: none]
    #[arg(long, conflicts_with = "text")]
    pub input: Option<PathBuf>,
    /// A single document to summarize [default: none]
    #[arg(long)]
    pub text: Option<String>,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Test pairs JSONL; "summary" is the reference (required)
    #[arg(long)]
    pub test: PathBuf,
    /// Output report JSON (required)
    #[arg(long)]
    pub report: PathBuf,
    /// Checkpoint to decode with [default: none, requires --predictions]
    #[arg(long, requires = "vocab")]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file for --checkpoint [default: none]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Pre-computed summaries as JSONL with "id" and "summary" [default: none]
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// CSV of the lowest ROUGE-L pairs [default: none]
    #[arg(long)]
    pub bottom_csv: Option<PathBuf>,
    /// Percentage of pairs in --bottom-csv
    #[arg(long, default_value_t = 5.0)]
    pub bottom_percent: f64,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run configuration JSON (model section) [default: L=2, d=16, heads=2, V=50, n_ctx=32]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for parameters, input sequence and sampled entries
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of parameter entries to check
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

/// Writes one JSON value per line.
fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::LearnBpe(a) => cmd_learn_bpe(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Split(a) => cmd_split(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Summarize(a) => cmd_summarize(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(corpus::load_jsonl(path)?
            .into_iter()
            .flat_map(|r| [r.source, r.summary])
            .collect())
    } else {
        Ok(std::fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect())
    }
}

pub fn cmd_learn_bpe(args: &LearnBpeArgs, out: &mut dyn Write) -> Result<i32> {
    let docs = read_corpus(&args.corpus)?;
    let tok = learn_bpe(&docs, args.vocab_size)?;
    tok.save(&args.out)?;
    emit(
        out,
        &json!({"vocab_size": tok.vocab_size(), "merges": tok.merges.len(), "out": args.out}),
    )?;
    Ok(0)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    if args.words == 0 || args.words > COMMON_WORDS.len() {
        return Err(Error::Config(format!(
            "--words must be in 1..={}",
            COMMON_WORDS.len()
        )));
    }
    let words = &COMMON_WORDS[..args.words];
    let range = (args.min_len, args.max_len);
    let records = match args.task {
        SynthTask::Copy => corpus::synth_copy_task(args.n, range, args.summary_len, words, args.seed)?,
        SynthTask::Keyword => {
            corpus::synth_keyword_task(args.n, range, args.summary_len, words, args.seed)?
        }
    };
    corpus::save_jsonl(&args.out, &records)?;
    emit(out, &json!({"records": records.len(), "out": args.out}))?;
    Ok(0)
}

pub fn cmd_split(args: &SplitArgs, out: &mut dyn Write) -> Result<i32> {
    let records = corpus::load_jsonl(&args.input)?;
    let fractions: [f64; 3] = args
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--fractions needs exactly three values".into()))?;
    let s = corpus::split(&records, fractions, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        corpus::save_jsonl(&args.out_dir.join(format!("{name}.jsonl")), part)?;
    }
    emit(
        out,
        &json!({"train": s.train.len(), "val": s.val.len(), "test": s.test.len()}),
    )?;
    Ok(0)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("no {what} given by flag or config")))
}

/// Encodes pairs into training triples.
pub fn encode_pairs(
    tok: &Tokenizer,
    records: &[PairRecord],
    limits: &SequenceLimits,
) -> Result<Vec<EncodedTriple>> {
    records
        .iter()
        .map(|r| {
            build_training_triple(
                &tok.encode(&r.source),
                &tok.encode(&r.summary),
                limits,
                &tok.specials(),
            )
            .map_err(|e| Error::Data(format!("record {}: {e}", r.id)))
        })
        .collect()
}

/// Resolved configuration for `train`: file values, then flag overrides.
pub fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut run = RunConfig::load_or_default(args.config.as_deref())?;
    run.set_seed(args.seed);
    let t = &mut run.train;
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.max_steps {
        t.max_steps = v;
    }
    if let Some(v) = args.eval_interval {
        t.eval_interval = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    if args.grad_clip.is_some() {
        t.grad_clip = args.grad_clip;
    }
    if args.summary_only_loss {
        t.summary_only_loss = true;
    }
    let m = &mut run.model;
    if let Some(v) = args.layers {
        m.n_layers = v;
    }
    if let Some(v) = args.dim {
        m.model_dim = v;
    }
    if let Some(v) = args.heads {
        m.n_heads = v;
    }
    if let Some(v) = args.context_len {
        m.context_len = v;
    }
    if args.no_segment_embedding {
        m.use_segment_embedding = false;
    }
    let s = &mut run.sequence;
    if let Some(v) = args.max_source_tokens {
        s.max_source_tokens = v;
    }
    if let Some(v) = args.max_summary_tokens {
        s.max_summary_tokens = v;
    }
    if args.literal_delta_position {
        s.literal_delta_position = true;
    }
    s.context_len = run.model.context_len;
    if args.vocab.is_some() {
        run.tokenizer_path = args.vocab.clone();
    }
    if args.train.is_some() {
        run.train_path = args.train.clone();
    }
    if args.val.is_some() {
        run.val_path = args.val.clone();
    }
    Ok(run)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut run = resolve_train_config(args)?;
    let tok = Tokenizer::load(&required(run.tokenizer_path.clone(), "vocabulary")?)?;
    run.model.vocab_size = tok.vocab_size();
    let train_recs = corpus::load_jsonl(&required(run.train_path.clone(), "training set")?)?;
    let val_recs = corpus::load_jsonl(&required(run.val_path.clone(), "validation set")?)?;
    let train_set = encode_pairs(&tok, &train_recs, &run.sequence)?;
    let val_set = encode_pairs(&tok, &val_recs, &run.sequence)?;

    let mut log_file = match &args.log {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };
    let mut log_err = None;
    let params = init_params(&run.model)?;
    let outcome = trainer::train(params, &train_set, &val_set, &run.train, |entry| {
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = emit(f, entry) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    checkpoint::save(&args.out, &outcome.params)?;
    emit(
        out,
        &json!({
            "checkpoint": args.out,
            "best_val_loss": outcome.best_val_loss,
            "best_step": outcome.best_step,
            "steps_run": outcome.steps_run,
            "stopped_early": outcome.stopped_early,
            "parameters": outcome.params.parameter_count(),
        }),
    )?;
    Ok(0)
}

/// Loads a checkpoint and vocabulary, requiring matching vocabulary sizes.
pub fn load_model(ckpt: &Path, vocab: &Path) -> Result<(ModelParams, Tokenizer)> {
    let params = checkpoint::load(ckpt)?;
    let tok = Tokenizer::load(vocab)?;
    if params.config.vocab_size != tok.vocab_size() {
        return Err(Error::Config(format!(
            "checkpoint vocabulary size {} does not match tokenizer vocabulary size {}",
            params.config.vocab_size,
            tok.vocab_size()
        )));
    }
    Ok((params, tok))
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryLine {
    id: String,
    summary: String,
    score: Option<f64>,
    truncated: bool,
    tokens: Vec<u32>,
}

fn summary_line(id: &str, tok: &Tokenizer, c: &Candidate) -> Result<SummaryLine> {
    Ok(SummaryLine {
        id: id.to_string(),
        summary: tok.decode(&c.tokens)?,
        score: c.score.is_finite().then_some(c.score),
        truncated: c.truncated,
        tokens: c.tokens.clone(),
    })
}

pub fn cmd_summarize(args: &SummarizeArgs, out: &mut dyn Write) -> Result<i32> {
    let decode = args.decode.resolve()?;
    let (params, tok) = load_model(&args.checkpoint, &args.vocab)?;
    let inputs: Vec<(String, String)> = match (&args.input, &args.text) {
        (Some(path), _) => corpus::load_jsonl(path)?
            .into_iter()
            .map(|r| (r.id, r.source))
            .collect(),
        (None, Some(text)) => vec![("0".to_string(), text.clone())],
        (None, None) => return Err(Error::Config("give --input or --text".into())),
    };
    for (id, source) in inputs {
        let c = summarize(&params, &tok.encode(&source), &tok.specials(), &decode)?;
        emit(out, &summary_line(&id, &tok, &c)?)?;
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct PairReport<'a> {
    id: &'a str,
    candidate: &'a str,
    reference: &'a str,
    scores: RougeTriple,
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let test = corpus::load_jsonl(&args.test)?;
    if test.is_empty() {
        return Err(Error::Config(format!("{} holds no pairs", args.test.display())));
    }
    let candidates: Vec<String> = match (&args.checkpoint, &args.predictions) {
        (Some(ckpt), _) => {
            let vocab = required(args.vocab.clone(), "vocabulary")?;
            let (params, tok) = load_model(ckpt, &vocab)?;
            let decode = args.decode.resolve()?;
            test.iter()
                .map(|r| {
                    let c = summarize(&params, &tok.encode(&r.source), &tok.specials(), &decode)?;
                    tok.decode(&c.tokens)
                })
                .collect::<Result<_>>()?
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let mut by_id = HashMap::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: serde_json::Value = serde_json::from_str(line)
                    .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
                let id = match &v["id"] {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Null => (i + 1).to_string(),
                    other => other.to_string(),
                };
                let summary = v["summary"].as_str().ok_or_else(|| {
                    Error::Data(format!("line {}: missing key \"summary\"", i + 1))
                })?;
                by_id.insert(id, summary.to_string());
            }
            test.iter()
                .map(|r| {
                    by_id.remove(&r.id).ok_or_else(|| {
                        Error::Data(format!("no prediction for test id {}", r.id))
                    })
                })
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::Config("give --checkpoint or --predictions".into())),
    };

    let scored: Vec<RougeTriple> = test
        .iter()
        .zip(&candidates)
        .map(|(r, c)| rouge::score_pair(c, &r.summary))
        .collect();
    let corpus_scores = rouge::aggregate(&scored);
    let pairs: Vec<PairReport> = test
        .iter()
        .zip(&candidates)
        .zip(&scored)
        .map(|((r, c), s)| PairReport {
            id: &r.id,
            candidate: c,
            reference: &r.summary,
            scores: *s,
        })
        .collect();
    let report = json!({"n": test.len(), "corpus": corpus_scores, "pairs": pairs});
    std::fs::write(&args.report, serde_json::to_vec_pretty(&report)?)?;

    if let Some(csv_path) = &args.bottom_csv {
        let mut order: Vec<usize> = (0..test.len()).collect();
        order.sort_by(|&a, &b| {
            scored[a]
                .rouge_l
                .f1
                .total_cmp(&scored[b].rouge_l.f1)
                .then(a.cmp(&b))
        });
        let keep = ((test.len() as f64 * args.bottom_percent / 100.0).ceil() as usize)
            .clamp(1, test.len());
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Io(e.into()))?;
        let header = ["id", "rouge_l_f1", "rouge1_f1", "rouge2_f1", "candidate", "reference", "source"];
        w.write_record(header).map_err(|e| Error::Io(e.into()))?;
        for &i in &order[..keep] {
            let s = &scored[i];
            w.write_record([
                test[i].id.as_str(),
                &s.rouge_l.f1.to_string(),
                &s.rouge1.f1.to_string(),
                &s.rouge2.f1.to_string(),
                candidates[i].as_str(),
                test[i].summary.as_str(),
                test[i].source.as_str(),
            ])
            .map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
    }
    emit(out, &json!({"n": test.len(), "corpus": corpus_scores, "report": args.report}))?;
    Ok(0)
}

/// Model used by `gradcheck` when no config file is given.
pub fn gradcheck_default_model() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        model_dim: 16,
        n_heads: 2,
        vocab_size: 50,
        context_len: 32,
        use_segment_embedding: true,
        seed: 0,
    }
}

/// A random training triple over non-control tokens that fits the context.
pub fn random_triple(config: &ModelConfig, rng: &mut impl Rng) -> Result<EncodedTriple> {
    let max_total = config.context_len.saturating_sub(3);
    let sum_len = rng.random_range(1..=(max_total / 4).max(1));
    let src_len = rng.random_range(1..=(max_total - sum_len).max(1));
    let lo = crate::tokenizer::END + 1;
    let hi = config.vocab_size as u32;
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    let source = draw(src_len);
    let summary = draw(sum_len);
    let limits = SequenceLimits {
        context_len: config.context_len,
        ..Default::default()
    };
    build_training_triple(&source, &summary, &limits, &Default::default())
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let mut model = match &args.config {
        Some(p) => RunConfig::load(p)?.model,
        None => gradcheck_default_model(),
    };
    model.seed = args.seed;
    let params = init_params(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let triple = random_triple(&model, &mut rng)?;
    let report = check_sequence_nll(&params, &triple, args.samples, args.step, args.seed)?;
    let passed = report.max_relative_error < args.threshold;
    emit(
        out,
        &json!({
            "passed": passed,
            "max_relative_error": report.max_relative_error,
            "threshold": args.threshold,
            "samples": args.samples,
            "sequence_len": triple.len(),
            "worst": report.worst(),
        }),
    )?;
    Ok(if passed { 0 } else { 1 })
}
