use log::warn;
use serde::{Deserialize, Serialize};

use super::{DataError, Episode};

/// Keeps episodes with a third-person camera and single-arm end-effector control.
pub fn curation_gate(episode: &Episode) -> bool {
    episode.meta.has_third_person_camera && episode.meta.single_arm_end_effector
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimRole {
    Translation,
    Rotation,
    Gripper,
}

/// Role of each action index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLayout(pub Vec<DimRole>);

impl Default for ActionLayout {
    /// `[0..2]` translation, `[3..5]` rotation, `[6]` gripper.
    fn default() -> Self {
        use DimRole::*;
        Self(vec![
            Translation,
            Translation,
            Translation,
            Rotation,
            Rotation,
            Rotation,
            Gripper,
        ])
    }
}

impl ActionLayout {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn norm(&self, action: &[f64], role: DimRole) -> f64 {
        self.0
            .iter()
            .zip(action)
            .filter(|(r, _)| **r == role)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn gripper(&self, action: &[f64]) -> Option<f64> {
        self.0
            .iter()
            .position(|r| *r == DimRole::Gripper)
            .map(|i| action[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoOpThresholds {
    pub eps_translation: f64,
    pub eps_rotation: f64,
    pub eps_gripper: f64,
    /// Gripper command assumed before the first step (open).
    #[serde(default)]
    pub gripper_rest: f64,
}

impl Default for NoOpThresholds {
    fn default() -> Self {
        Self {
            eps_translation: 1e-4,
            eps_rotation: 1e-4,
            eps_gripper: 1e-4,
            gripper_rest: 0.0,
        }
    }
}

impl NoOpThresholds {
    pub fn validate(&self) -> Result<(), DataError> {
        let all = [self.eps_translation, self.eps_rotation, self.eps_gripper];
        if all.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(DataError::Validation(
                "no-op thresholds must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Removes near-zero motion steps that leave the gripper unchanged.
///
/// The gripper delta is taken against the most recent retained step (or
/// `gripper_rest` before any step is retained), which makes the filter
/// idempotent.
pub fn filter_noops(
    episode: &Episode,
    th: &NoOpThresholds,
    layout: &ActionLayout,
) -> Result<Episode, DataError> {
    th.validate()?;
    let mut reference = th.gripper_rest;
    let mut steps = Vec::with_capacity(episode.steps.len());
    for (i, step) in episode.steps.iter().enumerate() {
        if step.action.len() != layout.len() {
            return Err(DataError::Validation(format!(
                "step {i}: layout covers {} dims but action has {}",
                layout.len(),
                step.action.len()
            )));
        }
        let grip = layout.gripper(&step.action);
        let grip_delta = grip.map_or(0.0, |g| (g - reference).abs());
        let noop = layout.norm(&step.action, DimRole::Translation) < th.eps_translation
            && layout.norm(&step.action, DimRole::Rotation) < th.eps_rotation
            && grip_delta < th.eps_gripper;
        if !noop {
            if let Some(g) = grip {
                reference = g;
            }
            steps.push(step.clone());
        }
    }
    Ok(Episode {
        steps,
        ..episode.clone()
    })
}

/// Drops the leading transition; `None` when nothing is left.
///
/// An episode that already had its first transition dropped is returned as is.
pub fn drop_first_transition(episode: &Episode) -> Option<Episode> {
    if episode.meta.first_transition_dropped {
        return (!episode.steps.is_empty()).then(|| episode.clone());
    }
    let steps = episode.steps.get(1..).unwrap_or_default().to_vec();
    if steps.is_empty() {
        return None;
    }
    let mut out = Episode {
        steps,
        ..episode.clone()
    };
    out.meta.first_transition_dropped = true;
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFilterReport {
    pub total: usize,
    pub removed: usize,
    pub retained: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Keeps the episodes whose replay succeeded.
pub fn filter_failed_replays(
    episodes: Vec<Episode>,
    success_flags: &[bool],
) -> Result<(Vec<Episode>, ReplayFilterReport), DataError> {
    if episodes.len() != success_flags.len() {
        return Err(DataError::Validation(format!(
            "{} episodes but {} success flags",
            episodes.len(),
            success_flags.len()
        )));
    }
    let total = episodes.len();
    let kept: Vec<Episode> = episodes
        .into_iter()
        .zip(success_flags)
        .filter_map(|(ep, &ok)| ok.then_some(ep))
        .collect();
    let warning = (kept.is_empty() && total > 0).then(|| {
        let msg = format!("all {total} demonstrations failed replay; dataset is empty");
        warn!("{msg}");
        msg
    });
    let report = ReplayFilterReport {
        total,
        removed: total - kept.len(),
        retained: kept.len(),
        warning,
    };
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::super::tests::episode;
    use super::*;

    const Z: [f64; 7] = [0.0; 7];

    fn with_grip(g: f64) -> [f64; 7] {
        let mut a = Z;
        a[6] = g;
        a
    }

    #[test]
    fn gate_requires_both_predicates() {
        let mut ep = episode("a", &[&Z]);
        assert!(curation_gate(&ep));
        ep.meta.has_third_person_camera = false;
        assert!(!curation_gate(&ep));
        ep.meta.has_third_person_camera = true;
        ep.meta.single_arm_end_effector = false;
        assert!(!curation_gate(&ep));
    }

    #[test]
    fn noop_rules() {
        let mv = [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let th = NoOpThresholds {
            eps_translation: 1e-3,
            ..Default::default()
        };
        let ep = episode("a", &[&mv, &Z, &with_grip(1.0)]);
        let out = filter_noops(&ep, &th, &ActionLayout::default()).unwrap();
        // zero step with unchanged gripper goes; the toggle 0 -> 1 stays.
        assert_eq!(out.steps.len(), 2);
        assert_eq!(out.steps[0].action, mv.to_vec());
        assert_eq!(out.steps[1].action, with_grip(1.0).to_vec());
    }

    #[test]
    fn noop_layout_mismatch() {
        let ep = episode("a", &[&[0.0; 3]]);
        let err = filter_noops(&ep, &NoOpThresholds::default(), &ActionLayout::default());
        assert!(matches!(err, Err(DataError::Validation(_))));
    }

    #[test]
    fn noop_filter_idempotent_on_leading_toggle() {
        let ep = episode("a", &[&Z, &with_grip(1.0), &with_grip(1.0)]);
        let th = NoOpThresholds::default();
        let layout = ActionLayout::default();
        let once = filter_noops(&ep, &th, &layout).unwrap();
        assert_eq!(once.steps.len(), 1);
        assert_eq!(filter_noops(&once, &th, &layout).unwrap(), once);
    }

    #[test]
    fn drop_first_cases() {
        let ep = episode("a", &[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let out = drop_first_transition(&ep).unwrap();
        assert_eq!(out.steps.len(), 4);
        assert_eq!(out.steps[0].action, vec![1.0]);
        assert_eq!(drop_first_transition(&out).unwrap(), out);
        assert!(drop_first_transition(&episode("a", &[&[0.0]])).is_none());
    }

    #[test]
    fn replay_filter_counts() {
        let eps: Vec<Episode> = (0..500).map(|_| episode("libero", &[&Z])).collect();
        let flags: Vec<bool> = (0..500).map(|i| i >= 68).collect();
        let (kept, report) = filter_failed_replays(eps.clone(), &flags).unwrap();
        assert_eq!(
            (kept.len(), report.removed, report.retained),
            (432, 68, 432)
        );
        assert!(report.warning.is_none());

        let (all, report) = filter_failed_replays(eps.clone(), &[true; 500]).unwrap();
        assert_eq!(all, eps);
        assert_eq!(report.removed, 0);

        let (none, report) = filter_failed_replays(eps.clone(), &[false; 500]).unwrap();
        assert!(none.is_empty());
        assert!(report.warning.is_some());

        assert!(filter_failed_replays(eps, &[true]).is_err());
    }
}
