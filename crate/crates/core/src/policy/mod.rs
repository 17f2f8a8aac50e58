//! Per-dimension linear-softmax action head.
//!
//! Every action dimension owns a `bins x total_dim` weight matrix and a bias
//! vector; the logits of dimension `d` are `W_d f + b_d` for the encoded
//! features `f`. Training minimises the mean next-token cross-entropy over
//! action tokens only, with hand-derived gradients.

mod encoder;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ActionCodec, ActionSpec, CodecError};

pub use encoder::{FeatureEncoder, DEFAULT_INSTR_DIM};
pub use train::{
    episode_samples, loss_and_grad, token_accuracy, train, EpochMetrics, Gradient, Sample,
    TrainConfig, TrainReport,
};

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("inference: {0}")]
    Inference(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("unsupported policy format version {0} (expected {POLICY_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("policy i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("policy json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Per-dimension argmax.
    #[default]
    Greedy,
    /// Per-dimension runner-up.
    SecondBest,
    /// Greedy unless the greedy tokens spell the all-zero action, then runner-up.
    Dynamic,
}

impl DecodeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::SecondBest => "second_best",
            DecodeMode::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "second_best" | "second-best" => Ok(Self::SecondBest),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(format!("unknown decode mode {other:?}")),
        }
    }
}

/// Decoded action and the tokens it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub action: Vec<f64>,
    pub tokens: Vec<u32>,
}

/// Trainable parameters plus decode configuration.
///
/// `weights` is laid out `[dim][bin][feature]`, `biases` `[dim][bin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPolicy {
    pub format_version: u32,
    pub spec: ActionSpec,
    pub encoder: FeatureEncoder,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub decode_mode: DecodeMode,
}

/// Greedy and runner-up index of a logit row; ties go to the lower index.
pub fn top_two(logits: &[f64]) -> (usize, usize) {
    let mut best = 0;
    let mut second = usize::MAX;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            second = best;
            best = i;
        } else if second == usize::MAX || logits[i] > logits[second] {
            second = i;
        }
    }
    (best, second)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl TokenPolicy {
    /// Zero-initialised policy (uniform predictive distribution).
    pub fn new(spec: ActionSpec, encoder: FeatureEncoder, decode_mode: DecodeMode) -> Self {
        let rows = spec.n_dims * spec.bins_per_dim;
        Self {
            format_version: POLICY_FORMAT_VERSION,
            spec,
            encoder,
            weights: vec![0.0; rows * encoder.total_dim()],
            biases: vec![0.0; rows],
            decode_mode,
        }
    }

    pub fn with_decode_mode(mut self, mode: DecodeMode) -> Self {
        self.decode_mode = mode;
        self
    }

    pub fn n_dims(&self) -> usize {
        self.spec.n_dims
    }

    pub fn bins(&self) -> usize {
        self.spec.bins_per_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.total_dim()
    }

    pub(crate) fn row(&self, dim: usize, bin: usize) -> usize {
        dim * self.spec.bins_per_dim + bin
    }

    pub fn params_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }

    pub fn features(&self, obs: &[f64], instruction: &str) -> Result<Vec<f64>, PolicyError> {
        if obs.len() != self.encoder.obs_dim {
            return Err(PolicyError::Validation(format!(
                "observation has {} entries, encoder expects {}",
                obs.len(),
                self.encoder.obs_dim
            )));
        }
        Ok(self.encoder.encode(obs, instruction))
    }

    /// Logits of one dimension for an encoded feature vector.
    pub fn logits(&self, dim: usize, features: &[f64]) -> Vec<f64> {
        let f = self.feature_dim();
        (0..self.bins())
            .map(|bin| {
                let row = self.row(dim, bin);
                let w = &self.weights[row * f..(row + 1) * f];
                self.biases[row] + w.iter().zip(features).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn all_logits(&self, features: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_dims())
            .map(|d| self.logits(d, features))
            .collect()
    }

    /// Decodes per-dimension logits into bins under `mode`.
    pub fn decode_bins(logits: &[Vec<f64>], mode: DecodeMode, zero_bins: &[usize]) -> Vec<usize> {
        let pairs: Vec<(usize, usize)> = logits.iter().map(|l| top_two(l)).collect();
        let greedy: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let second = || pairs.iter().map(|p| p.1).collect();
        match mode {
            DecodeMode::Greedy => greedy,
            DecodeMode::SecondBest => second(),
            DecodeMode::Dynamic if greedy == zero_bins => second(),
            DecodeMode::Dynamic => greedy,
        }
    }

    pub fn predict(
        &self,
        obs: &[f64],
        instruction: &str,
        codec: &ActionCodec,
    ) -> Result<Prediction, PolicyError> {
        if codec.spec != self.spec {
            return Err(PolicyError::Validation(format!(
                "codec spec {:?} does not match policy spec {:?}",
                codec.spec, self.spec
            )));
        }
        if !self.params_finite() {
            return Err(PolicyError::Inference(
                "policy has non-finite parameters".into(),
            ));
        }
        let features = self.features(obs, instruction)?;
        let logits = self.all_logits(&features);
        let zero_bins = codec.bins_of(&vec![0.0; self.n_dims()])?;
        let bins = Self::decode_bins(&logits, self.decode_mode, &zero_bins);
        let tokens = bins
            .iter()
            .map(|&b| codec.token_map.token_for_bin(b))
            .collect();
        Ok(Prediction {
            action: codec.decode_bins(&bins),
            tokens,
        })
    }

    pub fn to_json(&self) -> Result<String, PolicyError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.format_version != POLICY_FORMAT_VERSION {
            return Err(PolicyError::FormatVersion(v.format_version));
        }
        let policy: TokenPolicy = serde_json::from_str(text)?;
        policy.spec.validate()?;
        let rows = policy.spec.n_dims * policy.spec.bins_per_dim;
        if policy.biases.len() != rows || policy.weights.len() != rows * policy.feature_dim() {
            return Err(PolicyError::Validation("parameter shape mismatch".into()));
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()?).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
