use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Episode};
use crate::seed::{bounded, hash64, splitmix64, unit_f64};

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub dataset_name: String,
    pub weight: f64,
}

/// Drops a dataset from the mixture once training progress reaches `at_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub dataset_name: String,
    pub at_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removal: Option<Removal>,
}

impl MixtureSpec {
    /// The 27-dataset OpenX training mixture, DROID removed for the final third.
    ///
    /// Entries listed as "<0.1%" are stored as 0.05%; the raw weights sum to
    /// 0.949 and are renormalized by [`MixtureSpec::normalized`].
    pub fn openx() -> Self {
        serde_json::from_str(include_str!("../../assets/openx_mixture.json"))
            .expect("bundled mixture parses")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn raw_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.entries.is_empty() {
            return Err(DataError::Config("mixture has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.dataset_name.is_empty() {
                return Err(DataError::Config("entry with empty dataset_name".into()));
            }
            if !seen.insert(e.dataset_name.as_str()) {
                return Err(DataError::Config(format!(
                    "duplicate entry {}",
                    e.dataset_name
                )));
            }
            if !(e.weight.is_finite() && (0.0..=1.0).contains(&e.weight)) {
                return Err(DataError::Config(format!(
                    "weight of {} must lie in [0, 1], got {}",
                    e.dataset_name, e.weight
                )));
            }
        }
        if let Some(r) = &self.removal {
            if !seen.contains(r.dataset_name.as_str()) {
                return Err(DataError::Config(format!(
                    "removal names {} which is not in the mixture",
                    r.dataset_name
                )));
            }
            if !(r.at_fraction > 0.0 && r.at_fraction < 1.0) {
                return Err(DataError::Config(format!(
                    "removal at_fraction must lie in (0, 1), got {}",
                    r.at_fraction
                )));
            }
        }
        Ok(())
    }

    /// Copy with weights scaled to sum to one.
    pub fn normalized(&self) -> Result<Self, DataError> {
        self.validate()?;
        let sum = self.raw_sum();
        if sum <= 0.0 {
            return Err(DataError::Config("all mixture weights are zero".into()));
        }
        let mut out = self.clone();
        for e in &mut out.entries {
            e.weight /= sum;
        }
        Ok(out)
    }

    /// Whether the removal schedule is active at `progress`.
    pub fn removal_active(&self, progress: f64) -> bool {
        self.removal
            .as_ref()
            .is_some_and(|r| progress >= r.at_fraction)
    }

    /// Normalized per-entry probabilities at training `progress`.
    ///
    /// Once the removal is active its weight is redistributed proportionally
    /// over the remaining entries.
    pub fn effective_weights(&self, progress: f64) -> Result<Vec<f64>, DataError> {
        self.validate()?;
        let removed = self
            .removal
            .as_ref()
            .filter(|_| self.removal_active(progress))
            .map(|r| r.dataset_name.as_str());
        let raw: Vec<f64> = self
            .entries
            .iter()
            .map(|e| {
                if Some(e.dataset_name.as_str()) == removed {
                    0.0
                } else {
                    e.weight
                }
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(DataError::Config(format!(
                "all weights are zero at progress {progress}"
            )));
        }
        Ok(raw.into_iter().map(|w| w / sum).collect())
    }
}

/// One mixture draw: entry index and episode index within that dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub entry: usize,
    pub episode: usize,
}

/// Precomputed cumulative tables over a set of episode stores.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    spec: MixtureSpec,
    store_sizes: Vec<usize>,
    before: Vec<f64>,
    after: Option<Vec<f64>>,
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

impl MixtureSampler {
    pub fn new(
        spec: &MixtureSpec,
        datasets: &BTreeMap<String, Vec<Episode>>,
    ) -> Result<Self, DataError> {
        let spec = spec.normalized()?;
        let store_sizes: Vec<usize> = spec
            .entries
            .iter()
            .map(|e| datasets.get(&e.dataset_name).map_or(0, Vec::len))
            .collect();
        for (e, &n) in spec.entries.iter().zip(&store_sizes) {
            if e.weight > 0.0 && n == 0 {
                return Err(DataError::Config(format!(
                    "dataset {} has positive weight but no episodes",
                    e.dataset_name
                )));
            }
        }
        let before = cumulative(&spec.effective_weights(0.0)?);
        let after = match &spec.removal {
            Some(r) => Some(cumulative(&spec.effective_weights(r.at_fraction)?)),
            None => None,
        };
        Ok(Self {
            spec,
            store_sizes,
            before,
            after,
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    /// Draw number `index` of the stream keyed by `seed`.
    pub fn draw(&self, progress: f64, seed: u64, index: u64) -> Draw {
        let cum = match &self.after {
            Some(after) if self.spec.removal_active(progress) => after,
            _ => &self.before,
        };
        let word = hash64(seed, index);
        let u = unit_f64(word);
        let mut entry = cum.partition_point(|&c| c <= u);
        if entry >= cum.len() {
            // u landed in the rounding gap above the last cumulative value
            let last = *cum.last().expect("non-empty mixture");
            entry = cum.iter().position(|&c| c == last).unwrap_or(cum.len() - 1);
        }
        let episode = bounded(splitmix64(word), self.store_sizes[entry]);
        Draw { entry, episode }
    }

    pub fn dataset_name(&self, entry: usize) -> &str {
        &self.spec.entries[entry].dataset_name
    }
}

/// Draws one episode from the scheduled mixture.
pub fn sample_mixture<'a>(
    spec: &MixtureSpec,
    datasets: &'a BTreeMap<String, Vec<Episode>>,
    progress: f64,
    rng_seed: u64,
    index: u64,
) -> Result<&'a Episode, DataError> {
    let sampler = MixtureSampler::new(spec, datasets)?;
    let d = sampler.draw(progress, rng_seed, index);
    Ok(&datasets[sampler.dataset_name(d.entry)][d.episode])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub dataset_name: String,
    pub episodes: usize,
    pub steps: usize,
    pub raw_weight: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_after_removal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub entries: Vec<ReportEntry>,
    pub raw_sum: f64,
    pub normalized_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_removal_sum: Option<f64>,
    pub normalized_ok: bool,
    pub warnings: Vec<String>,
}

pub fn mixture_report(
    spec: &MixtureSpec,
    datasets: &BTreeMap<String, Vec<Episode>>,
) -> MixtureReport {
    let mut warnings = Vec::new();
    let before = spec.effective_weights(0.0).unwrap_or_else(|e| {
        warnings.push(e.to_string());
        vec![0.0; spec.entries.len()]
    });
    let after = spec.removal.as_ref().map(|r| {
        spec.effective_weights(r.at_fraction).unwrap_or_else(|e| {
            warnings.push(e.to_string());
            vec![0.0; spec.entries.len()]
        })
    });

    let entries: Vec<ReportEntry> = spec
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let store = datasets.get(&e.dataset_name);
            let episodes = store.map_or(0, Vec::len);
            if e.weight > 0.0 && episodes == 0 {
                warnings.push(format!(
                    "dataset {} has weight {} but no episodes",
                    e.dataset_name, e.weight
                ));
            }
            ReportEntry {
                dataset_name: e.dataset_name.clone(),
                episodes,
                steps: store.map_or(0, |s| s.iter().map(Episode::n_steps).sum()),
                raw_weight: e.weight,
                weight: before[i],
                weight_after_removal: after.as_ref().map(|a| a[i]),
            }
        })
        .collect();

    let raw_sum = spec.raw_sum();
    if (raw_sum - 1.0).abs() > NORMALIZATION_TOL {
        warnings.push(format!("raw weights sum to {raw_sum}; normalized to 1"));
    }
    let normalized_sum: f64 = before.iter().sum();
    let after_removal_sum = after.as_ref().map(|a| a.iter().sum::<f64>());
    let normalized_ok = (normalized_sum - 1.0).abs() <= NORMALIZATION_TOL
        && after_removal_sum.is_none_or(|s| (s - 1.0).abs() <= NORMALIZATION_TOL);
    MixtureReport {
        entries,
        raw_sum,
        normalized_sum,
        after_removal_sum,
        normalized_ok,
        warnings,
    }
}
