//! Decoder-only transformer with pre-block layer normalization, a learned
//! segment embedding and an output projection tied to the token embedding.
//!
//! Hidden states are stored `len × d` (one row per position), so the token
//! embedding is `V × d` and logits are `H · W_Eᵀ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Graph, Tensor, Var};
use crate::sequence::{EncodedTriple, Segment};
use crate::tokenizer::{TokenId, BASE_VOCAB_SIZE};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
pub const SEGMENT_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub use_segment_embedding: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            model_dim: 64,
            n_heads: 4,
            vocab_size: 2000,
            context_len: 128,
            use_segment_embedding: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.n_heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return fail(format!(
                "model_dim {} must be a positive multiple of n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        if self.context_len < 8 {
            return fail(format!("context_len {} is below 8", self.context_len));
        }
        if self.vocab_size <= crate::tokenizer::END as usize + 1 {
            return fail(format!(
                "vocab_size {} leaves no room beyond the control tokens",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.model_dim
    }

    /// Smallest vocabulary a learned tokenizer can have.
    pub fn min_tokenizer_vocab() -> usize {
        BASE_VOCAB_SIZE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn_norm_gain: Tensor,
    pub attn_norm_bias: Tensor,
    pub query_weight: Tensor,
    pub query_bias: Tensor,
    pub key_weight: Tensor,
    pub key_bias: Tensor,
    pub value_weight: Tensor,
    pub value_bias: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub mlp_norm_gain: Tensor,
    pub mlp_norm_bias: Tensor,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
}

impl BlockParams {
    const NAMES: [&'static str; 16] = [
        "attn_norm.gain",
        "attn_norm.bias",
        "attn.query.weight",
        "attn.query.bias",
        "attn.key.weight",
        "attn.key.bias",
        "attn.value.weight",
        "attn.value.bias",
        "attn.out.weight",
        "attn.out.bias",
        "mlp_norm.gain",
        "mlp_norm.bias",
        "mlp.fc.weight",
        "mlp.fc.bias",
        "mlp.proj.weight",
        "mlp.proj.bias",
    ];

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.query_weight,
            &self.query_bias,
            &self.key_weight,
            &self.key_bias,
            &self.value_weight,
            &self.value_bias,
            &self.out_weight,
            &self.out_bias,
            &self.mlp_norm_gain,
            &self.mlp_norm_bias,
            &self.fc_weight,
            &self.fc_bias,
            &self.proj_weight,
            &self.proj_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.query_weight,
            &mut self.query_bias,
            &mut self.key_weight,
            &mut self.key_bias,
            &mut self.value_weight,
            &mut self.value_bias,
            &mut self.out_weight,
            &mut self.out_bias,
            &mut self.mlp_norm_gain,
            &mut self.mlp_norm_bias,
            &mut self.fc_weight,
            &mut self.fc_bias,
            &mut self.proj_weight,
            &mut self.proj_bias,
        ]
    }
}

/// Every trainable tensor. There is no separate output matrix: logits use
/// `token_embedding` transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `V × d`.
    pub token_embedding: Tensor,
    /// `n_ctx × d`.
    pub position_embedding: Tensor,
    /// `2 × d`, rows for source and summary; absent in the ablated model.
    pub segment_embedding: Option<Tensor>,
    pub blocks: Vec<BlockParams>,
    pub final_norm_gain: Tensor,
    pub final_norm_bias: Tensor,
}

/// Expected `(name, shape)` of every parameter, in canonical order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.model_dim;
    let h = config.mlp_dim();
    let mut out = vec![
        ("token_embedding".to_string(), vec![config.vocab_size, d]),
        ("position_embedding".to_string(), vec![config.context_len, d]),
    ];
    if config.use_segment_embedding {
        out.push(("segment_embedding".to_string(), vec![SEGMENT_COUNT, d]));
    }
    let block_shapes: [Vec<usize>; 16] = [
        vec![d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d, h],
        vec![h],
        vec![h, d],
        vec![d],
    ];
    for layer in 0..config.n_layers {
        for (name, shape) in BlockParams::NAMES.iter().zip(block_shapes.iter()) {
            out.push((format!("blocks.{layer}.{name}"), shape.clone()));
        }
    }
    out.push(("final_norm.gain".to_string(), vec![d]));
    out.push(("final_norm.bias".to_string(), vec![d]));
    out
}

/// Weights ~ N(0, 0.02²), layer-norm gains 1, all biases 0. Deterministic in
/// `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).map_err(|e| Error::Internal(e.to_string()))?;
    let tensors = parameter_layout(config)
        .into_iter()
        .map(|(name, shape)| {
            if name.ends_with(".gain") {
                Tensor::filled(&shape, 1.0)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::from_parts(shape, data)
            }
        })
        .collect();
    ModelParams::from_tensors(config.clone(), tensors)
}

impl ModelParams {
    /// Assembles parameters from tensors in [`parameter_layout`] order,
    /// checking every shape.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let token_embedding = next();
        let position_embedding = next();
        let segment_embedding = config.use_segment_embedding.then(&mut next);
        let blocks = (0..config.n_layers)
            .map(|_| BlockParams {
                attn_norm_gain: next(),
                attn_norm_bias: next(),
                query_weight: next(),
                query_bias: next(),
                key_weight: next(),
                key_bias: next(),
                value_weight: next(),
                value_bias: next(),
                out_weight: next(),
                out_bias: next(),
                mlp_norm_gain: next(),
                mlp_norm_bias: next(),
                fc_weight: next(),
                fc_bias: next(),
                proj_weight: next(),
                proj_bias: next(),
            })
            .collect();
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            segment_embedding,
            blocks,
            final_norm_gain: next(),
            final_norm_bias: next(),
        })
    }

    /// Tensors in [`parameter_layout`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        out.extend(self.segment_embedding.as_ref());
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(&self.final_norm_gain);
        out.push(&self.final_norm_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        out.extend(self.segment_embedding.as_mut());
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_norm_gain);
        out.push(&mut self.final_norm_bias);
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        parameter_layout(&self.config)
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.tensors())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Parameter nodes bound into a graph, in [`parameter_layout`] order.
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind(graph: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .into_iter()
            .map(|t| graph.leaf(t.clone(), trainable))
            .collect();
        Self { vars }
    }
}

/// Borrowed view of the three aligned input sequences.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub tokens: &'a [TokenId],
    pub positions: &'a [usize],
    pub segments: &'a [Segment],
}

impl<'a> From<&'a EncodedTriple> for Inputs<'a> {
    fn from(t: &'a EncodedTriple) -> Self {
        Self {
            tokens: &t.tokens,
            positions: &t.positions,
            segments: &t.segments,
        }
    }
}

impl Inputs<'_> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The first `len` elements of each sequence.
    pub fn prefix(&self, len: usize) -> Self {
        Self {
            tokens: &self.tokens[..len],
            positions: &self.positions[..len],
            segments: &self.segments[..len],
        }
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 || self.positions.len() != n || self.segments.len() != n {
            return Err(Error::Shape(format!(
                "input lengths differ or are empty: tokens {}, positions {}, segments {}",
                n,
                self.positions.len(),
                self.segments.len()
            )));
        }
        if n > config.context_len {
            return Err(Error::Shape(format!(
                "sequence of {n} tokens exceeds context {}",
                config.context_len
            )));
        }
        if let Some(p) = self.positions.iter().find(|&&p| p >= config.context_len) {
            return Err(Error::Shape(format!(
                "position {p} outside context {}",
                config.context_len
            )));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::Data(format!(
                "token {t} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Records `H₀ = W_E[S] + W_P[P] (+ W_Q[Q])`, shape `len × d`.
pub fn embed_graph(
    graph: &mut Graph,
    params: &ModelParams,
    bound: &BoundParams,
    inputs: Inputs<'_>,
) -> Result<Var> {
    inputs.validate(&params.config)?;
    let ids: Vec<usize> = inputs.tokens.iter().map(|&t| t as usize).collect();
    let tok = graph.gather_rows(bound.vars[0], &ids)?;
    let pos = graph.gather_rows(bound.vars[1], inputs.positions)?;
    let mut h = graph.add(tok, pos)?;
    if params.segment_embedding.is_some() {
        let segs: Vec<usize> = inputs.segments.iter().map(|s| s.index()).collect();
        let seg = graph.gather_rows(bound.vars[2], &segs)?;
        h = graph.add(h, seg)?;
    }
    Ok(h)
}

fn linear(graph: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = graph.matmul(x, weight)?;
    graph.add_row_bias(y, bias)
}

/// Records the full forward pass; returns logits of shape `len × V`.
pub fn logits_graph(
    graph: &mut Graph,
    params: &ModelParams,
    bound: &BoundParams,
    inputs: Inputs<'_>,
) -> Result<Var> {
    let cfg = &params.config;
    let mut x = embed_graph(graph, params, bound, inputs)?;
    let first_block = if cfg.use_segment_embedding { 3 } else { 2 };
    let head_dim = cfg.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();

    for layer in 0..cfg.n_layers {
        let v = &bound.vars[first_block + 16 * layer..first_block + 16 * (layer + 1)];
        let h = graph.layer_norm(x, v[0], v[1], LAYER_NORM_EPS)?;
        let q = linear(graph, h, v[2], v[3])?;
        let k = linear(graph, h, v[4], v[5])?;
        let val = linear(graph, h, v[6], v[7])?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let start = head * head_dim;
            let qh = graph.slice_cols(q, start, head_dim)?;
            let kh = graph.slice_cols(k, start, head_dim)?;
            let vh = graph.slice_cols(val, start, head_dim)?;
            let scores = graph.matmul_nt(qh, kh)?;
            let scores = graph.scale(scores, scale);
            let masked = graph.causal_mask(scores)?;
            let weights = graph.softmax_rows(masked);
            heads.push(graph.matmul(weights, vh)?);
        }
        let attn = graph.concat_cols(&heads)?;
        let attn = linear(graph, attn, v[8], v[9])?;
        x = graph.add(x, attn)?;

        let h = graph.layer_norm(x, v[10], v[11], LAYER_NORM_EPS)?;
        let f = linear(graph, h, v[12], v[13])?;
        let f = graph.gelu(f);
        let m = linear(graph, f, v[14], v[15])?;
        x = graph.add(x, m)?;
    }
    let n = bound.vars.len();
    let h = graph.layer_norm(x, bound.vars[n - 2], bound.vars[n - 1], LAYER_NORM_EPS)?;
    graph.matmul_nt(h, bound.vars[0])
}

/// `H₀` as a plain tensor, `len × d`.
pub fn embed(params: &ModelParams, inputs: Inputs<'_>) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let h = embed_graph(&mut g, params, &bound, inputs)?;
    Ok(g.value(h).clone())
}

/// Next-token logits, `len × V`; row `j` scores the token at `j + 1`.
pub fn forward_logits(params: &ModelParams, inputs: Inputs<'_>) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let out = logits_graph(&mut g, params, &bound, inputs)?;
    Ok(g.value(out).clone())
}

/// Next-token distributions, `len × V`; row `j` is `p(t_{j+1} | t_0..t_j)`.
pub fn forward(params: &ModelParams, inputs: Inputs<'_>) -> Result<Tensor> {
    Ok(softmax_rows(&forward_logits(params, inputs)?))
}
