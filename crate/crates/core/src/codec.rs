//! Continuous action <-> vocabulary token codec.
//!
//! Each action dimension is discretized independently into `bins_per_dim`
//! uniform bins spanning the 1st..99th percentile of the training actions.
//! Bins are written over the last `bins_per_dim` ids of the vocabulary, bin 0
//! on id `vocab_size - bins_per_dim` (ascending orientation).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Codec file format version understood by this build.
pub const CODEC_FORMAT_VERSION: u32 = 1;

/// Lower and upper percentiles used for the discretization interval.
pub const LOWER_PERCENTILE: u64 = 1;
pub const UPPER_PERCENTILE: u64 = 99;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid action spec: {0}")]
    InvalidSpec(String),
    #[error("invalid token map: {0}")]
    InvalidTokenMap(String),
    #[error("cannot fit codec: dimension {dim} has {count} samples (need at least 2)")]
    Fit { dim: usize, count: usize },
    #[error("non-finite value {value} in dimension {dim} at index {index}")]
    NonFinite {
        dim: usize,
        index: usize,
        value: f64,
    },
    #[error("non-finite action value {value} in dimension {dim}")]
    NonFiniteAction { dim: usize, value: f64 },
    #[error("expected {expected} action dimensions, got {got}")]
    Length { expected: usize, got: usize },
    #[error("token {token} in dimension {dim} is outside the action range {lo}..={hi}")]
    Decode {
        token: u32,
        dim: usize,
        lo: u32,
        hi: u32,
    },
    #[error("unsupported codec format version {0} (expected {CODEC_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("codec i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("codec json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub n_dims: usize,
    pub bins_per_dim: usize,
}

impl Default for ActionSpec {
    fn default() -> Self {
        Self {
            n_dims: 7,
            bins_per_dim: 256,
        }
    }
}

impl ActionSpec {
    pub fn new(n_dims: usize, bins_per_dim: usize) -> Result<Self, CodecError> {
        let spec = Self {
            n_dims,
            bins_per_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.n_dims < 1 {
            return Err(CodecError::InvalidSpec("n_dims must be >= 1".into()));
        }
        if self.bins_per_dim < 2 {
            return Err(CodecError::InvalidSpec("bins_per_dim must be >= 2".into()));
        }
        Ok(())
    }

    /// Bin used for dimensions whose interval collapsed to a point.
    pub fn middle_bin(&self) -> usize {
        (self.bins_per_dim - 1) / 2
    }
}

/// Discretization interval of one action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimQuantiles {
    pub q_lo: f64,
    pub q_hi: f64,
    pub width: f64,
}

impl DimQuantiles {
    pub fn new(q_lo: f64, q_hi: f64, bins: usize) -> Self {
        Self {
            q_lo,
            q_hi,
            width: (q_hi - q_lo) / bins as f64,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.width == 0.0
    }

    pub fn bin(&self, value: f64, bins: usize) -> usize {
        if self.is_degenerate() {
            return (bins - 1) / 2;
        }
        let raw = ((value - self.q_lo) / self.width).floor();
        if raw <= 0.0 {
            0
        } else if raw >= (bins - 1) as f64 {
            bins - 1
        } else {
            raw as usize
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        if self.is_degenerate() {
            self.q_lo
        } else {
            self.q_lo + (bin as f64 + 0.5) * self.width
        }
    }
}

/// Reserved block at the end of the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMap {
    pub vocab_size: u32,
    pub reserved: u32,
}

impl TokenMap {
    pub fn new(vocab_size: u32, reserved: u32) -> Result<Self, CodecError> {
        if reserved == 0 {
            return Err(CodecError::InvalidTokenMap(
                "reserved must be positive".into(),
            ));
        }
        if vocab_size < reserved {
            return Err(CodecError::InvalidTokenMap(format!(
                "vocab_size {vocab_size} smaller than reserved block {reserved}"
            )));
        }
        Ok(Self {
            vocab_size,
            reserved,
        })
    }

    /// Llama-sized vocabulary with `bins` reserved ids.
    pub fn llama(bins: usize) -> Self {
        Self {
            vocab_size: 32000,
            reserved: bins as u32,
        }
    }

    pub fn first_token(&self) -> u32 {
        self.vocab_size - self.reserved
    }

    pub fn last_token(&self) -> u32 {
        self.vocab_size - 1
    }

    pub fn token_for_bin(&self, bin: usize) -> u32 {
        debug_assert!(bin < self.reserved as usize);
        self.first_token() + bin as u32
    }

    pub fn bin_for_token(&self, token: u32) -> Option<usize> {
        (self.first_token()..=self.last_token())
            .contains(&token)
            .then(|| (token - self.first_token()) as usize)
    }
}

/// Which end of the reserved block bin 0 lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOrientation {
    #[default]
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCodec {
    pub format_version: u32,
    pub spec: ActionSpec,
    pub per_dim: Vec<DimQuantiles>,
    pub token_map: TokenMap,
    #[serde(default)]
    pub orientation: BinOrientation,
}

/// Nearest-rank percentile of an ascending-sorted slice, `pct` in percent.
///
/// The rank `ceil(pct * n / 100)` is computed in integers so that exact
/// products such as `0.99 * 100` never round the wrong way.
pub fn nearest_rank(sorted: &[f64], pct: u64) -> f64 {
    let n = sorted.len() as u64;
    assert!(n > 0, "percentile of an empty sample");
    let rank = (pct * n).div_ceil(100).clamp(1, n);
    sorted[(rank - 1) as usize]
}

/// Fits per-dimension quantile bounds from column-major samples.
pub fn fit_codec(
    samples: &[Vec<f64>],
    spec: ActionSpec,
    token_map: TokenMap,
) -> Result<ActionCodec, CodecError> {
    spec.validate()?;
    if token_map.reserved as usize != spec.bins_per_dim {
        return Err(CodecError::InvalidTokenMap(format!(
            "reserved block {} does not match bins_per_dim {}",
            token_map.reserved, spec.bins_per_dim
        )));
    }
    TokenMap::new(token_map.vocab_size, token_map.reserved)?;
    if samples.len() != spec.n_dims {
        return Err(CodecError::Length {
            expected: spec.n_dims,
            got: samples.len(),
        });
    }

    let mut per_dim = Vec::with_capacity(spec.n_dims);
    for (dim, column) in samples.iter().enumerate() {
        if column.len() < 2 {
            return Err(CodecError::Fit {
                dim,
                count: column.len(),
            });
        }
        if let Some((index, &value)) = column.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(CodecError::NonFinite { dim, index, value });
        }
        let mut sorted = column.clone();
        sorted.sort_by(f64::total_cmp);
        let q_lo = nearest_rank(&sorted, LOWER_PERCENTILE);
        let q_hi = nearest_rank(&sorted, UPPER_PERCENTILE);
        per_dim.push(DimQuantiles::new(q_lo, q_hi, spec.bins_per_dim));
    }

    Ok(ActionCodec {
        format_version: CODEC_FORMAT_VERSION,
        spec,
        per_dim,
        token_map,
        orientation: BinOrientation::Ascending,
    })
}

/// Transposes row-major action vectors into per-dimension columns.
pub fn columns<'a, I>(actions: I, n_dims: usize) -> Result<Vec<Vec<f64>>, CodecError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut cols = vec![Vec::new(); n_dims];
    for action in actions {
        if action.len() != n_dims {
            return Err(CodecError::Length {
                expected: n_dims,
                got: action.len(),
            });
        }
        for (col, &v) in cols.iter_mut().zip(action) {
            col.push(v);
        }
    }
    Ok(cols)
}

/// Fits a codec to row-major action vectors.
pub fn fit_codec_to_actions<'a, I>(
    actions: I,
    spec: ActionSpec,
    token_map: TokenMap,
) -> Result<ActionCodec, CodecError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    fit_codec(&columns(actions, spec.n_dims)?, spec, token_map)
}

impl ActionCodec {
    pub fn n_dims(&self) -> usize {
        self.spec.n_dims
    }

    pub fn bins(&self) -> usize {
        self.spec.bins_per_dim
    }

    fn check_action(&self, action: &[f64]) -> Result<(), CodecError> {
        if action.len() != self.spec.n_dims {
            return Err(CodecError::Length {
                expected: self.spec.n_dims,
                got: action.len(),
            });
        }
        if let Some((dim, &value)) = action.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(CodecError::NonFiniteAction { dim, value });
        }
        Ok(())
    }

    /// Per-dimension bin indices of an action.
    pub fn bins_of(&self, action: &[f64]) -> Result<Vec<usize>, CodecError> {
        self.check_action(action)?;
        Ok(self
            .per_dim
            .iter()
            .zip(action)
            .map(|(q, &a)| q.bin(a, self.spec.bins_per_dim))
            .collect())
    }

    pub fn tokenize(&self, action: &[f64]) -> Result<Vec<u32>, CodecError> {
        Ok(self
            .bins_of(action)?
            .into_iter()
            .map(|b| self.token_map.token_for_bin(b))
            .collect())
    }

    pub fn token_to_bin(&self, dim: usize, token: u32) -> Result<usize, CodecError> {
        self.token_map
            .bin_for_token(token)
            .ok_or(CodecError::Decode {
                token,
                dim,
                lo: self.token_map.first_token(),
                hi: self.token_map.last_token(),
            })
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<Vec<f64>, CodecError> {
        if tokens.len() != self.spec.n_dims {
            return Err(CodecError::Length {
                expected: self.spec.n_dims,
                got: tokens.len(),
            });
        }
        tokens
            .iter()
            .enumerate()
            .map(|(dim, &t)| Ok(self.per_dim[dim].center(self.token_to_bin(dim, t)?)))
            .collect()
    }

    /// Decodes bin indices directly (bins must be in range).
    pub fn decode_bins(&self, bins: &[usize]) -> Vec<f64> {
        self.per_dim
            .iter()
            .zip(bins)
            .map(|(q, &b)| q.center(b))
            .collect()
    }

    /// Token vector of the all-zero action.
    pub fn zero_action_tokens(&self) -> Vec<u32> {
        self.tokenize(&vec![0.0; self.spec.n_dims])
            .expect("zero action is finite and correctly sized")
    }

    pub fn to_json(&self) -> Result<String, CodecError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(0) as u32;
        if version != CODEC_FORMAT_VERSION {
            return Err(CodecError::FormatVersion(version));
        }
        let codec: ActionCodec = serde_json::from_value(value)?;
        codec.spec.validate()?;
        if codec.per_dim.len() != codec.spec.n_dims {
            return Err(CodecError::Length {
                expected: codec.spec.n_dims,
                got: codec.per_dim.len(),
            });
        }
        Ok(codec)
    }

    pub fn save(&self, path: &Path) -> Result<(), CodecError> {
        fs::write(path, self.to_json()?).map_err(|source| CodecError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        let text = fs::read_to_string(path).map_err(|source| CodecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
