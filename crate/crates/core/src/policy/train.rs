use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{top_two, PolicyError, TokenPolicy};
use crate::codec::ActionCodec;
use crate::data::Episode;

/// One supervised example: encoded features and the target bin per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub target_token_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 3e-2,
            batch_size: 1,
            rng_seed: 0,
            target_token_accuracy: 0.95,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.epochs < 1 {
            return Err(PolicyError::Validation("epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(PolicyError::Validation("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(PolicyError::Validation("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub token_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub reached_target: bool,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |m| m.token_accuracy)
    }
}

/// Gradient with the same layout as the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradient {
    fn zeros_like(policy: &TokenPolicy) -> Self {
        Self {
            weights: vec![0.0; policy.weights.len()],
            biases: vec![0.0; policy.biases.len()],
        }
    }
}

fn check_sample(policy: &TokenPolicy, s: &Sample) -> Result<(), PolicyError> {
    if s.features.len() != policy.feature_dim() {
        return Err(PolicyError::Validation(format!(
            "sample has {} features, policy expects {}",
            s.features.len(),
            policy.feature_dim()
        )));
    }
    if s.targets.len() != policy.n_dims() {
        return Err(PolicyError::Validation(format!(
            "sample has {} targets, policy has {} dimensions",
            s.targets.len(),
            policy.n_dims()
        )));
    }
    if let Some(t) = s.targets.iter().find(|&&t| t >= policy.bins()) {
        return Err(PolicyError::Validation(format!(
            "target bin {t} outside 0..{}",
            policy.bins()
        )));
    }
    Ok(())
}

/// Non-zero feature entries; most hashed instruction buckets are empty.
fn sparse(features: &[f64]) -> Vec<(usize, f64)> {
    features
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

fn sparse_logits(policy: &TokenPolicy, dim: usize, feats: &[(usize, f64)], out: &mut [f64]) {
    let f = policy.feature_dim();
    for (bin, slot) in out.iter_mut().enumerate() {
        let row = policy.row(dim, bin);
        let w = &policy.weights[row * f..(row + 1) * f];
        *slot = policy.biases[row] + feats.iter().map(|&(i, v)| w[i] * v).sum::<f64>();
    }
}

/// Adds `scale * d(loss)/d(params)` for `batch` into `grad`; returns the summed loss.
fn accumulate(policy: &TokenPolicy, batch: &[&Sample], scale: f64, grad: &mut Gradient) -> f64 {
    let f = policy.feature_dim();
    let bins = policy.bins();
    let mut logits = vec![0.0; bins];
    let mut total = 0.0;
    for s in batch {
        let feats = sparse(&s.features);
        for (dim, &target) in s.targets.iter().enumerate() {
            sparse_logits(policy, dim, &feats, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - logits[target];
            for (bin, &l) in logits.iter().enumerate() {
                let mut delta = (l - log_z).exp();
                if bin == target {
                    delta -= 1.0;
                }
                let delta = delta * scale;
                let row = policy.row(dim, bin);
                grad.biases[row] += delta;
                let w = &mut grad.weights[row * f..(row + 1) * f];
                for &(i, v) in &feats {
                    w[i] += delta * v;
                }
            }
        }
    }
    total
}

/// Mean action-token cross-entropy over samples and dimensions, and its exact gradient.
pub fn loss_and_grad(
    policy: &TokenPolicy,
    batch: &[Sample],
) -> Result<(f64, Gradient), PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::Validation("empty batch".into()));
    }
    for s in batch {
        check_sample(policy, s)?;
    }
    let denom = (batch.len() * policy.n_dims()) as f64;
    let mut grad = Gradient::zeros_like(policy);
    let refs: Vec<&Sample> = batch.iter().collect();
    let total = accumulate(policy, &refs, 1.0 / denom, &mut grad);
    Ok((total / denom, grad))
}

fn mean_loss(policy: &TokenPolicy, data: &[Sample]) -> f64 {
    let bins = policy.bins();
    let mut logits = vec![0.0; bins];
    let mut total = 0.0;
    for s in data {
        let feats = sparse(&s.features);
        for (dim, &target) in s.targets.iter().enumerate() {
            sparse_logits(policy, dim, &feats, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            total += max + sum.ln() - logits[target];
        }
    }
    total / (data.len() * policy.n_dims()) as f64
}

/// Encodes every step of `episodes` into a training sample.
pub fn episode_samples(
    policy: &TokenPolicy,
    codec: &ActionCodec,
    episodes: &[Episode],
) -> Result<Vec<Sample>, PolicyError> {
    let mut out = Vec::with_capacity(episodes.iter().map(|e| e.steps.len()).sum());
    for ep in episodes {
        for step in &ep.steps {
            out.push(Sample {
                features: policy.features(&step.obs, &ep.instruction)?,
                targets: codec.bins_of(&step.action)?,
            });
        }
    }
    Ok(out)
}

/// Fraction of `(sample, dimension)` pairs whose argmax bin equals the target.
pub fn token_accuracy(policy: &TokenPolicy, data: &[Sample]) -> Result<f64, PolicyError> {
    if data.is_empty() {
        return Err(PolicyError::Validation(
            "token accuracy of an empty dataset".into(),
        ));
    }
    let mut logits = vec![0.0; policy.bins()];
    let mut hits = 0usize;
    for s in data {
        check_sample(policy, s)?;
        let feats = sparse(&s.features);
        for (dim, &target) in s.targets.iter().enumerate() {
            sparse_logits(policy, dim, &feats, &mut logits);
            if top_two(&logits).0 == target {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (data.len() * policy.n_dims()) as f64)
}

/// Mini-batch gradient descent with a seeded shuffle each epoch.
///
/// Stops after the first epoch whose token accuracy reaches
/// `cfg.target_token_accuracy`.
pub fn train(
    policy: &mut TokenPolicy,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, PolicyError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(PolicyError::Validation("empty training set".into()));
    }
    for s in data {
        check_sample(policy, s)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = Gradient::zeros_like(policy);
    let mut epochs = Vec::new();
    let mut reached_target = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            grad.weights.fill(0.0);
            grad.biases.fill(0.0);
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let scale = 1.0 / (batch.len() * policy.n_dims()) as f64;
            accumulate(policy, &batch, scale, &mut grad);
            for (p, g) in policy.weights.iter_mut().zip(&grad.weights) {
                *p -= cfg.learning_rate * g;
            }
            for (p, g) in policy.biases.iter_mut().zip(&grad.biases) {
                *p -= cfg.learning_rate * g;
            }
        }

        let loss = mean_loss(policy, data);
        if !loss.is_finite() || !policy.params_finite() {
            return Err(PolicyError::Diverged { epoch, loss });
        }
        let token_accuracy = token_accuracy(policy, data)?;
        debug!("epoch {epoch}: loss {loss:.5} token accuracy {token_accuracy:.4}");
        epochs.push(EpochMetrics {
            epoch,
            loss,
            token_accuracy,
        });
        if token_accuracy >= cfg.target_token_accuracy {
            reached_target = true;
            break;
        }
    }

    Ok(TrainReport {
        epochs,
        reached_target,
    })
}
