use crate::data::{Episode, EpisodeMeta, Step};
use crate::seed::{bounded, hash64};

use super::expert::jog;
use super::{scripted_expert, EnvAction, SimConfig, ACTION_DIMS};

pub const DATASET_NAME: &str = "simlab-reach";

/// Instruction paraphrases; episode `seed` uses `INSTRUCTIONS[seed % 3]`.
pub const INSTRUCTIONS: [&str; 3] = [
    "pick up the block and put it on the goal",
    "move the block onto the target",
    "place the block at the goal marker",
];

/// Seed stream for the demonstrator's first-move ramp.
const RAMP_STREAM: u64 = 0x5241_4d50;

/// Jog speeds, as fractions of the expert's step, for the first move.
pub const FIRST_MOVE_SPEEDS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Fraction of the expert's first move actually commanded in episode `seed`.
pub fn first_move_ramp(seed: u64) -> f64 {
    FIRST_MOVE_SPEEDS[bounded(hash64(seed, RAMP_STREAM), FIRST_MOVE_SPEEDS.len())]
}

/// Records one scripted-expert demonstration from `seed`.
///
/// The demonstrator eases into motion: its first move out of the start pose
/// is scaled by [`first_move_ramp`]. With `idle_first_step` the recorder also
/// logs an all-zero action before the expert takes over, the way
/// teleoperation logs often start.
pub fn record_demonstration(cfg: &SimConfig, seed: u64, idle_first_step: bool) -> Episode {
    let mut state = cfg.initial_state(seed);
    let mut steps = Vec::new();
    if idle_first_step {
        steps.push(Step {
            obs: cfg.observe(&state),
            action: vec![0.0; ACTION_DIMS],
            is_terminal: false,
        });
        state = cfg.step(&state, &EnvAction::default());
    }
    while !cfg.delivered(&state) && state.tick < cfg.t_max {
        let mut action = scripted_expert(cfg, &state);
        if !state.moved {
            let ramp = first_move_ramp(seed);
            action.d_pos = action.d_pos.map(|d| jog(d * ramp, cfg.max_step));
        }
        steps.push(Step {
            obs: cfg.observe(&state),
            action: action.to_vec(),
            is_terminal: false,
        });
        state = cfg.step(&state, &action);
    }
    if let Some(last) = steps.last_mut() {
        last.is_terminal = true;
    }
    Episode {
        dataset_name: DATASET_NAME.to_string(),
        instruction: INSTRUCTIONS[(seed % INSTRUCTIONS.len() as u64) as usize].to_string(),
        steps,
        meta: EpisodeMeta {
            has_third_person_camera: true,
            single_arm_end_effector: true,
            success: Some(cfg.delivered(&state)),
            env_seed: Some(seed),
            first_transition_dropped: false,
        },
    }
}

/// Demonstrations for seeds `first_seed..first_seed + n`.
pub fn collect_demonstrations(
    cfg: &SimConfig,
    n: usize,
    first_seed: u64,
    idle_first_step: bool,
) -> Vec<Episode> {
    (first_seed..first_seed + n as u64)
        .map(|seed| record_demonstration(cfg, seed, idle_first_step))
        .collect()
}

/// Replays the recorded actions from the episode's seed; `None` without a seed.
///
/// Episodes whose first transition was dropped start one idle tick later, which
/// leaves the world unchanged apart from the tick counter.
pub fn replay_success(cfg: &SimConfig, episode: &Episode) -> Option<bool> {
    let seed = episode.meta.env_seed?;
    let mut state = cfg.initial_state(seed);
    for step in &episode.steps {
        if cfg.delivered(&state) {
            break;
        }
        state = cfg.step(&state, &EnvAction::from_slice(&step.action));
    }
    Some(cfg.delivered(&state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demonstrations_succeed_and_replay() {
        let cfg = SimConfig::default();
        for seed in 0..20 {
            let ep = record_demonstration(&cfg, seed, true);
            assert_eq!(ep.meta.success, Some(true));
            assert!(ep.steps[0].action.iter().all(|&v| v == 0.0));
            assert!(ep.steps.last().unwrap().is_terminal);
            assert_eq!(replay_success(&cfg, &ep), Some(true));
            ep.validate(Some(ACTION_DIMS)).unwrap();
        }
    }

    #[test]
    fn replay_detects_tampering() {
        let cfg = SimConfig::default();
        let mut ep = record_demonstration(&cfg, 3, false);
        for step in &mut ep.steps {
            step.action[6] = 0.0;
        }
        assert_eq!(replay_success(&cfg, &ep), Some(false));
        ep.meta.env_seed = None;
        assert_eq!(replay_success(&cfg, &ep), None);
    }
}
