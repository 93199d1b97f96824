//! Maximum-likelihood training with Adam and validation-based early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logits_graph, BoundParams, Inputs, ModelParams};
use crate::numerics::{Graph, Tensor};
use crate::sequence::EncodedTriple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub seed: u64,
    /// Only score tokens after β. Off by default: the objective is the
    /// likelihood of the whole sequence.
    pub summary_only_loss: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_steps: 2000,
            eval_interval: 100,
            patience: 3,
            seed: 0,
            summary_only_loss: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 || self.batch_size == 0 || self.eval_interval == 0 || self.max_steps == 0
        {
            return Err(Error::Config(
                "patience, batch_size, eval_interval and max_steps must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Gradients for every parameter, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, y)| *x += factor * y);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

fn loss_weights(triple: &EncodedTriple, summary_only: bool) -> Option<Vec<f64>> {
    summary_only.then(|| {
        (1..triple.len())
            .map(|i| if i > triple.summary_start { 1.0 } else { 0.0 })
            .collect()
    })
}

fn check_triple(triple: &EncodedTriple) -> Result<()> {
    if triple.len() < 2 {
        return Err(Error::Data(format!(
            "a sequence of {} tokens has nothing to predict",
            triple.len()
        )));
    }
    Ok(())
}

/// Mean over positions `1..|S|` of `−log p(t_i | t_0 … t_{i−1})`.
pub fn sequence_nll(params: &ModelParams, triple: &EncodedTriple, summary_only: bool) -> Result<f64> {
    check_triple(triple)?;
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let n = triple.len();
    let logits = logits_graph(&mut g, params, &bound, Inputs::from(triple).prefix(n - 1))?;
    let targets: Vec<usize> = triple.tokens[1..].iter().map(|&t| t as usize).collect();
    let weights = loss_weights(triple, summary_only);
    let loss = g.cross_entropy(logits, &targets, weights.as_deref())?;
    g.value(loss).item()
}

/// [`sequence_nll`] and its gradient with respect to every parameter.
pub fn sequence_loss_and_grads(
    params: &ModelParams,
    triple: &EncodedTriple,
    summary_only: bool,
) -> Result<(f64, Gradients)> {
    check_triple(triple)?;
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, true);
    let n = triple.len();
    let logits = logits_graph(&mut g, params, &bound, Inputs::from(triple).prefix(n - 1))?;
    let targets: Vec<usize> = triple.tokens[1..].iter().map(|&t| t as usize).collect();
    let weights = loss_weights(triple, summary_only);
    let loss = g.cross_entropy(logits, &targets, weights.as_deref())?;
    g.backward(loss)?;
    let tensors = bound
        .vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
        })
        .collect();
    Ok((g.value(loss).item()?, Gradients { tensors }))
}

/// Mean of per-sequence losses over a batch, with the matching gradient.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &[&EncodedTriple],
    summary_only: bool,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = Gradients::zeros_like(params);
    let mut loss = 0.0;
    for triple in batch {
        let (l, g) = sequence_loss_and_grads(params, triple, summary_only)?;
        loss += l * scale;
        total.add_scaled(&g, scale);
    }
    Ok((loss, total))
}

/// One bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &mut Gradients,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    let mut tensors = params.tensors_mut();
    if grads.tensors.len() != tensors.len()
        || state.first_moment.len() != tensors.len()
        || state.second_moment.len() != tensors.len()
    {
        return Err(Error::Internal(format!(
            "{} parameters but {} gradients / {} moments",
            tensors.len(),
            grads.tensors.len(),
            state.first_moment.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, p) in tensors.iter_mut().enumerate() {
        let g = &grads.tensors[i];
        if g.shape() != p.shape() {
            return Err(Error::Internal(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    grads.zero();
    Ok(())
}

/// Mean [`sequence_nll`] over a set.
pub fn evaluate(params: &ModelParams, set: &[EncodedTriple], summary_only: bool) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let mut total = 0.0;
    for t in set {
        total += sequence_nll(params, t, summary_only)?;
    }
    Ok(total / set.len() as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the evaluation with the lowest validation loss.
    pub params: ModelParams,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub log: Vec<LogEntry>,
}

/// Trains until validation loss fails to improve for `patience`
/// consecutive evaluations or `max_steps` is reached. `on_eval` sees every
/// log entry as it is produced.
pub fn train(
    mut params: ModelParams,
    train_set: &[EncodedTriple],
    val_set: &[EncodedTriple],
    config: &TrainConfig,
    mut on_eval: impl FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty splits (train {}, validation {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut state = OptimizerState::new(&params);

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut bad_evals = 0;
    let mut log = Vec::new();
    let mut interval_loss = 0.0;
    let mut interval_steps = 0;
    let mut stopped_early = false;
    let mut step = 0;

    while step < config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let (loss, mut grads) = batch_loss_and_grads(&params, &batch, config.summary_only_loss)?;
        if let Some(limit) = config.grad_clip {
            let norm = grads.global_norm();
            if norm > limit {
                let scale = limit / norm;
                for t in &mut grads.tensors {
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        adam_step(&mut params, &mut grads, &mut state, config)?;
        step += 1;
        interval_loss += loss;
        interval_steps += 1;

        if step % config.eval_interval == 0 || step == config.max_steps {
            let val_loss = evaluate(&params, val_set, config.summary_only_loss)?;
            let entry = LogEntry {
                step,
                train_loss: interval_loss / interval_steps as f64,
                val_loss,
                wall_time: started.elapsed().as_secs_f64(),
            };
            on_eval(&entry);
            log.push(entry);
            interval_loss = 0.0;
            interval_steps = 0;

            if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
                best = Some((val_loss, step, params.clone()));
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_val_loss, best_step, best_params) =
        best.ok_or_else(|| Error::Internal("training finished without an evaluation".into()))?;
    Ok(TrainOutcome {
        params: best_params,
        best_val_loss,
        best_step,
        steps_run: step,
        stopped_early,
        log,
    })
}
