//! Trajectory storage, curation filters and mixture sampling.
//!
//! Datasets live on disk as UTF-8 JSON-lines: a header line
//! `{"format":"vla-episodes","version":1}` followed by one [`Episode`] per line.

mod filters;
mod mixture;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filters::{
    curation_gate, drop_first_transition, filter_failed_replays, filter_noops, ActionLayout,
    DimRole, NoOpThresholds, ReplayFilterReport,
};
pub use mixture::{
    mixture_report, sample_mixture, Draw, MixtureEntry, MixtureReport, MixtureSampler, MixtureSpec,
    Removal, ReportEntry,
};

pub const EPISODE_FORMAT: &str = "vla-episodes";
pub const EPISODE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("mixture configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    #[serde(default)]
    pub is_terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub has_third_person_camera: bool,
    pub single_arm_end_effector: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    /// Simulator seed the episode was recorded from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_seed: Option<u64>,
    /// Set once the leading transition has been dropped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub first_transition_dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub dataset_name: String,
    pub instruction: String,
    pub steps: Vec<Step>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn validate(&self, n_dims: Option<usize>) -> Result<(), DataError> {
        if self.dataset_name.is_empty() {
            return Err(DataError::Validation("empty dataset_name".into()));
        }
        if self.steps.is_empty() {
            return Err(DataError::Validation(format!(
                "episode of {} has no steps",
                self.dataset_name
            )));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if let Some(n) = n_dims {
                if step.action.len() != n {
                    return Err(DataError::Validation(format!(
                        "step {i}: action has {} dims, expected {n}",
                        step.action.len()
                    )));
                }
            }
            if step.obs.iter().chain(&step.action).any(|v| !v.is_finite()) {
                return Err(DataError::Validation(format!("step {i}: non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_episodes<'a, I>(path: &Path, episodes: I) -> Result<usize, DataError>
where
    I: IntoIterator<Item = &'a Episode>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format: EPISODE_FORMAT.to_string(),
        version: EPISODE_FORMAT_VERSION,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io_err(path))?;
    let mut count = 0;
    for episode in episodes {
        serde_json::to_writer(&mut out, episode)?;
        out.write_all(b"\n").map_err(io_err(path))?;
        count += 1;
    }
    out.flush().map_err(io_err(path))?;
    Ok(count)
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let parse = |line: usize, message: String| DataError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str(&line).map_err(|e| parse(1, format!("bad header: {e}")))?
        }
        None => return Err(parse(1, "missing header line".into())),
    };
    if header.format != EPISODE_FORMAT || header.version != EPISODE_FORMAT_VERSION {
        return Err(parse(
            1,
            format!(
                "unsupported format {}/{} (expected {EPISODE_FORMAT}/{EPISODE_FORMAT_VERSION})",
                header.format, header.version
            ),
        ));
    }

    let mut episodes = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let episode: Episode =
            serde_json::from_str(&line).map_err(|e| parse(idx + 1, e.to_string()))?;
        episode
            .validate(None)
            .map_err(|e| parse(idx + 1, e.to_string()))?;
        episodes.push(episode);
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn episode(name: &str, actions: &[&[f64]]) -> Episode {
        Episode {
            dataset_name: name.into(),
            instruction: "pick".into(),
            steps: actions
                .iter()
                .map(|a| Step {
                    obs: vec![0.0],
                    action: a.to_vec(),
                    is_terminal: false,
                })
                .collect(),
            meta: EpisodeMeta {
                has_third_person_camera: true,
                single_arm_end_effector: true,
                ..Default::default()
            },
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        let eps = vec![
            episode("a", &[&[0.1, 0.2]]),
            episode("b", &[&[1.0, -1.0], &[0.0, 0.5]]),
        ];
        write_episodes(&path, &eps).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"format\":\"vla-episodes\",\"version\":1}\n"));
        assert_eq!(read_episodes(&path).unwrap(), eps);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_episodes(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        assert!(read_episodes(&path).unwrap().is_empty());
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"format\":\"other\",\"version\":1}\n").unwrap();
        assert!(matches!(
            read_episodes(&path),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn validate_catches_bad_episodes() {
        let mut ep = episode("a", &[&[0.0; 3]]);
        assert!(ep.validate(Some(3)).is_ok());
        assert!(ep.validate(Some(7)).is_err());
        ep.steps[0].obs[0] = f64::NAN;
        assert!(ep.validate(None).is_err());
        ep.steps.clear();
        assert!(ep.validate(None).is_err());
    }
}
