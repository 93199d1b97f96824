//! Structural properties of the transformer: causality, segment ablation,
//! weight tying and checkpoint fidelity.

mod common;

use common::{random_triple, rng, tiny_config, tiny_params};
use dtrf::checkpoint;
use dtrf::gradcheck::{central_difference, relative_error};
use dtrf::model::{forward_logits, init_params, parameter_layout, Inputs, ModelConfig, ModelParams};
use dtrf::numerics::Tensor;
use dtrf::sequence::Segment;
use dtrf::trainer::{evaluate, sequence_loss_and_grads, sequence_nll};
use rand::Rng;

#[test]
fn later_tokens_never_change_earlier_logits() {
    let params = tiny_params(3);
    let mut r = rng(4);
    for trial in 0..20 {
        let t = random_triple(&mut r, 50, 12, 5, 32);
        let base = forward_logits(&params, Inputs::from(&t)).unwrap();
        let j = r.random_range(1..t.len());
        let mut changed = t.clone();
        changed.tokens[j] = (changed.tokens[j] + 1 + r.random_range(0..40)) % 50;
        let after = forward_logits(&params, Inputs::from(&changed)).unwrap();
        for i in 0..j {
            assert_eq!(base.row(i), after.row(i), "trial {trial}: row {i} moved after editing {j}");
        }
    }
}

/// The same model without segment embeddings, sharing every other tensor.
fn without_segments(params: &ModelParams) -> ModelParams {
    let config = ModelConfig {
        use_segment_embedding: false,
        ..params.config.clone()
    };
    let named = params.named_tensors();
    let tensors = parameter_layout(&config)
        .iter()
        .map(|(name, _)| named.iter().find(|(n, _)| n == name).unwrap().1.clone())
        .collect();
    ModelParams::from_tensors(config, tensors).unwrap()
}

#[test]
fn zero_segment_embedding_matches_ablated_model() {
    let mut params = tiny_params(5);
    let seg = params.segment_embedding.as_mut().unwrap();
    *seg = Tensor::zeros(seg.shape());
    let ablated = without_segments(&params);
    let t = random_triple(&mut rng(6), 50, 10, 4, 32);
    let a = forward_logits(&params, Inputs::from(&t)).unwrap();
    let b = forward_logits(&ablated, Inputs::from(&t)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablated_model_ignores_segment_ids() {
    let ablated = without_segments(&tiny_params(7));
    let t = random_triple(&mut rng(8), 50, 10, 4, 32);
    let mut flipped = t.clone();
    for s in &mut flipped.segments {
        *s = match s {
            Segment::Source => Segment::Summary,
            Segment::Summary => Segment::Source,
        };
    }
    assert_eq!(
        forward_logits(&ablated, Inputs::from(&t)).unwrap(),
        forward_logits(&ablated, Inputs::from(&flipped)).unwrap()
    );
    let with = tiny_params(7);
    assert_ne!(
        forward_logits(&with, Inputs::from(&t)).unwrap(),
        forward_logits(&with, Inputs::from(&flipped)).unwrap()
    );
}

#[test]
fn segment_embedding_adds_two_rows_of_width_d() {
    let with = init_params(&tiny_config()).unwrap();
    let without = without_segments(&with);
    assert_eq!(with.parameter_count() - without.parameter_count(), 2 * 16);
}

#[test]
fn output_projection_is_the_token_embedding() {
    assert!(parameter_layout(&tiny_config())
        .iter()
        .all(|(name, _)| !name.contains("output") && !name.contains("unembed")));

    // A token that never appears in the input still gets an embedding
    // gradient, which can only flow through the output projection.
    let params = tiny_params(9);
    let mut t = random_triple(&mut rng(10), 40, 8, 3, 32);
    t.tokens.iter_mut().for_each(|x| *x = (*x).min(39));
    let absent = 45usize;
    let (_, grads) = sequence_loss_and_grads(&params, &t, false).unwrap();
    let d = params.config.model_dim;
    let row = &grads.tensors[0].data()[absent * d..(absent + 1) * d];
    assert!(row.iter().any(|g| g.abs() > 1e-8));
    for (k, &analytic) in row.iter().enumerate() {
        let numeric = central_difference(
            |x| {
                let mut p = params.clone();
                p.token_embedding.data_mut()[absent * d + k] = x;
                sequence_nll(&p, &t, false)
            },
            params.token_embedding.data()[absent * d + k],
            1e-3,
        )
        .unwrap();
        assert!(relative_error(analytic, numeric) < 1e-5, "entry {k}");
    }
}

#[test]
fn checkpoint_preserves_validation_loss() {
    let params = tiny_params(11);
    let mut r = rng(12);
    let val: Vec<_> = (0..8).map(|_| random_triple(&mut r, 50, 9, 3, 32)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &params).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config, params.config);
    let before = evaluate(&params, &val, false).unwrap();
    let after = evaluate(&loaded, &val, false).unwrap();
    assert!((before - after).abs() < 1e-6, "{before} vs {after}");
}
