//! Finite-difference verification of the analytic gradient of
//! [`sequence_nll`](crate::trainer::sequence_nll).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{parameter_layout, ModelParams};
use crate::sequence::EncodedTriple;
use crate::trainer::{sequence_loss_and_grads, sequence_nll};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central difference of `f` at `x` with the five-point stencil.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let f1 = f(x + h)?;
    let f_1 = f(x - h)?;
    let f2 = f(x + 2.0 * h)?;
    let f_2 = f(x - 2.0 * h)?;
    Ok((8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradSample {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// Compares the backward pass against finite differences at `n_samples`
/// parameter entries drawn uniformly over all parameters.
pub fn check_sequence_nll(
    params: &ModelParams,
    triple: &EncodedTriple,
    n_samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = sequence_loss_and_grads(params, triple, false)?;
    let names: Vec<String> = parameter_layout(&params.config)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut samples = Vec::with_capacity(n_samples);

    for _ in 0..n_samples {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let original = params.tensors()[which].data()[flat];
        let numeric = central_difference(
            |x| {
                work.tensors_mut()[which].data_mut()[flat] = x;
                sequence_nll(&work, triple, false)
            },
            original,
            step,
        )?;
        work.tensors_mut()[which].data_mut()[flat] = original;
        let analytic = grads.tensors[which].data()[flat];
        samples.push(GradSample {
            parameter: names[which].clone(),
            index: flat,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        });
    }
    let max_relative_error = samples
        .iter()
        .map(|s| s.relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        samples,
        max_relative_error,
    })
}
