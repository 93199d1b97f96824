#![allow(dead_code)]

use dtrf::model::{init_params, ModelConfig, ModelParams};
use dtrf::numerics::Tensor;
use dtrf::sequence::{build_training_triple, EncodedTriple, SequenceLimits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn tiny_config() -> ModelConfig {
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

pub fn tiny_params(seed: u64) -> ModelParams {
    init_params(&ModelConfig { seed, ..tiny_config() }).unwrap()
}

pub fn limits(ctx: usize) -> SequenceLimits {
    SequenceLimits {
        context_len: ctx,
        max_summary_tokens: ctx / 4,
        ..Default::default()
    }
}

/// A triple over non-control ids below `vocab`.
pub fn random_triple(
    rng: &mut ChaCha8Rng,
    vocab: u32,
    src_len: usize,
    sum_len: usize,
    ctx: usize,
) -> EncodedTriple {
    let source: Vec<u32> = (0..src_len).map(|_| rng.random_range(4..vocab)).collect();
    let summary: Vec<u32> = (0..sum_len).map(|_| rng.random_range(4..vocab)).collect();
    let limits = SequenceLimits {
        context_len: ctx,
        ..Default::default()
    };
    build_training_triple(&source, &summary, &limits, &Default::default()).unwrap()
}
