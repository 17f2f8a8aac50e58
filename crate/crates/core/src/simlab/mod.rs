//! 2D point-mass pick-and-place world.
//!
//! The end effector moves by a velocity command clamped to `max_step` per
//! axis per tick. Closing the gripper (command >= 0.5) within `grasp_radius`
//! of the object grasps it; opening releases it. The task is delivered when
//! the released object rests within `goal_radius` of the goal.

mod expert;
mod record;
mod rollout;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use expert::{scripted_expert, EXPERT_GAIN, JOG_LEVELS};
pub use record::{
    collect_demonstrations, first_move_ramp, record_demonstration, replay_success, DATASET_NAME,
    INSTRUCTIONS,
};
pub use rollout::{
    rollout, ControlMode, ControllerMode, EndpointError, EndpointReply, ExpertEndpoint,
    LocalPolicyEndpoint, PolicyEndpoint, PredictionRecord, RolloutResult, TaskOutcome, TickRecord,
};

/// Flattened action length: `[dx, dy, dz, rx, ry, rz, gripper]`, with `dz` and
/// the rotations carried but ignored by the 2D dynamics.
pub const ACTION_DIMS: usize = 7;
/// Index of the gripper command in the flattened action.
pub const GRIPPER_INDEX: usize = 6;
/// Nodes of the hat encoding of each offset axis in the observation.
pub const OFFSET_NODES: usize = 17;
const OFFSET_BLOCK: usize = 2 + 2 * OFFSET_NODES;
/// Length of [`SimConfig::observe`]'s feature vector.
pub const OBS_DIM: usize = 2 * OFFSET_BLOCK + 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub t_max: u32,
    pub grasp_radius: f64,
    pub goal_radius: f64,
    pub max_step: f64,
    /// Per-tick displacement (fraction of `max_step`) under which the arm
    /// counts as idle.
    pub rest_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_max: 200,
            grasp_radius: 0.05,
            goal_radius: 0.1,
            max_step: 0.05,
            rest_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_pos: [f64; 2],
    pub obj_pos: [f64; 2],
    pub goal_pos: [f64; 2],
    pub grasped: bool,
    /// Last gripper command was "close".
    pub gripper_closed: bool,
    /// Some tick has displaced the end effector by at least the rest threshold.
    pub moved: bool,
    pub tick: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvAction {
    pub d_pos: [f64; 2],
    pub rot: [f64; 3],
    pub gripper: f64,
}

impl EnvAction {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.d_pos[0],
            self.d_pos[1],
            0.0,
            self.rot[0],
            self.rot[1],
            self.rot[2],
            self.gripper,
        ]
    }

    /// Reads the 7-dim layout `[dx, dy, dz, rx, ry, rz, gripper]`; `dz` is ignored.
    pub fn from_slice(a: &[f64]) -> Self {
        let get = |i: usize| a.get(i).copied().filter(|v| v.is_finite()).unwrap_or(0.0);
        Self {
            d_pos: [get(0), get(1)],
            rot: [get(3), get(4), get(5)],
            gripper: get(GRIPPER_INDEX),
        }
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn clamp_step(v: f64, max_step: f64) -> f64 {
    if v.is_finite() {
        v.clamp(-max_step, max_step)
    } else {
        0.0
    }
}

impl SimConfig {
    /// Seeded initial state with the object and goal well separated.
    pub fn initial_state(&self, seed: u64) -> WorldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point =
            |rng: &mut ChaCha8Rng| [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
        let ee_pos = point(&mut rng);
        let obj_pos = loop {
            let p = point(&mut rng);
            if dist(p, ee_pos) >= 0.25 {
                break p;
            }
        };
        let goal_pos = loop {
            let p = point(&mut rng);
            if dist(p, obj_pos) >= 0.4 {
                break p;
            }
        };
        WorldState {
            ee_pos,
            obj_pos,
            goal_pos,
            grasped: false,
            gripper_closed: false,
            moved: false,
            tick: 0,
        }
    }

    /// Advances the world by one tick.
    pub fn step(&self, state: &WorldState, action: &EnvAction) -> WorldState {
        let mut next = *state;
        let d = [
            clamp_step(action.d_pos[0], self.max_step),
            clamp_step(action.d_pos[1], self.max_step),
        ];
        for (p, step) in next.ee_pos.iter_mut().zip(d) {
            *p = (*p + step).clamp(-1.0, 1.0);
        }
        let rest = self.rest_fraction * self.max_step;
        next.moved =
            state.moved || (0..2).any(|i| (next.ee_pos[i] - state.ee_pos[i]).abs() >= rest);
        let closing = action.gripper >= 0.5;
        if closing
            && !state.gripper_closed
            && !state.grasped
            && dist(state.ee_pos, state.obj_pos) <= self.grasp_radius
        {
            next.grasped = true;
        }
        if !closing {
            next.grasped = false;
        }
        next.gripper_closed = closing;
        if next.grasped {
            next.obj_pos = next.ee_pos;
        }
        next.tick = state.tick + 1;
        next
    }

    pub fn delivered(&self, state: &WorldState) -> bool {
        !state.grasped && dist(state.obj_pos, state.goal_pos) <= self.goal_radius
    }

    /// Policy observation: phase-gated target offset and task-phase flags.
    ///
    /// The target is the object before the grasp and the goal after it. The
    /// offset is scaled so that `u = ±1` where the expert's step saturates,
    /// `u = clamp(rel * EXPERT_GAIN / max_step, -1, 1)`, and appears raw and as
    /// a hat-function encoding over [`OFFSET_NODES`] evenly spaced nodes, so a
    /// linear readout can pick intermediate step sizes near the target.
    ///
    /// The offset block is written to one of two slots depending on whether the
    /// arm has moved yet, giving the start pose a readout of its own:
    /// `[offset if moved.., offset if unmoved.., within_grasp, within_release,
    /// grasped, unmoved]`
    pub fn observe(&self, state: &WorldState) -> Vec<f64> {
        let target = if state.grasped {
            state.goal_pos
        } else {
            state.obj_pos
        };
        let scale = self.max_step / EXPERT_GAIN;
        let u = [0, 1].map(|i| ((target[i] - state.ee_pos[i]) / scale).clamp(-1.0, 1.0));
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut block = Vec::with_capacity(OFFSET_BLOCK);
        block.extend(u);
        for v in u {
            block.extend(hat_encode(v));
        }
        let empty = [0.0; OFFSET_BLOCK];
        let mut obs = Vec::with_capacity(OBS_DIM);
        if state.moved {
            obs.extend(&block);
            obs.extend(empty);
        } else {
            obs.extend(empty);
            obs.extend(&block);
        }
        obs.push(flag(
            !state.grasped && dist(state.ee_pos, state.obj_pos) <= self.grasp_radius,
        ));
        obs.push(flag(
            state.grasped && dist(state.ee_pos, state.goal_pos) <= 0.5 * self.goal_radius,
        ));
        obs.push(flag(state.grasped));
        obs.push(flag(!state.moved));
        obs
    }
}

/// Piecewise-linear interpolation weights of `v` in [-1, 1] over evenly spaced nodes.
fn hat_encode(v: f64) -> [f64; OFFSET_NODES] {
    let spacing = 2.0 / (OFFSET_NODES - 1) as f64;
    std::array::from_fn(|k| {
        let node = -1.0 + k as f64 * spacing;
        (1.0 - (v - node).abs() / spacing).max(0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at_object() -> WorldState {
        WorldState {
            ee_pos: [0.2, 0.2],
            obj_pos: [0.2, 0.2],
            goal_pos: [-0.5, 0.5],
            grasped: false,
            gripper_closed: false,
            moved: false,
            tick: 3,
        }
    }

    #[test]
    fn zero_action_only_ticks() {
        let cfg = SimConfig::default();
        let s = cfg.initial_state(4);
        let n = cfg.step(&s, &EnvAction::default());
        assert_eq!(n, WorldState { tick: 1, ..s });
    }

    #[test]
    fn moved_needs_a_real_step() {
        let cfg = SimConfig::default();
        let s = cfg.initial_state(4);
        let drift = cfg.step(
            &s,
            &EnvAction {
                d_pos: [0.0002, -0.0002],
                ..Default::default()
            },
        );
        assert!(!drift.moved);
        let n = cfg.step(
            &s,
            &EnvAction {
                d_pos: [0.0, 0.005],
                ..Default::default()
            },
        );
        assert!(n.moved);
        assert!(cfg.step(&n, &EnvAction::default()).moved);
    }

    #[test]
    fn closing_at_object_grasps() {
        let cfg = SimConfig::default();
        let n = cfg.step(
            &at_object(),
            &EnvAction {
                gripper: 1.0,
                ..Default::default()
            },
        );
        assert!(n.grasped && n.gripper_closed);
    }

    #[test]
    fn grasped_object_follows() {
        let cfg = SimConfig::default();
        let s = WorldState {
            grasped: true,
            gripper_closed: true,
            ..at_object()
        };
        let n = cfg.step(
            &s,
            &EnvAction {
                d_pos: [0.1, 0.0],
                gripper: 1.0,
                ..Default::default()
            },
        );
        // clamped to max_step
        assert!((n.ee_pos[0] - 0.25).abs() < 1e-12);
        assert_eq!(n.obj_pos, n.ee_pos);
    }

    #[test]
    fn closing_while_already_closed_does_not_grasp() {
        let cfg = SimConfig::default();
        let s = WorldState {
            gripper_closed: true,
            ..at_object()
        };
        assert!(
            !cfg.step(
                &s,
                &EnvAction {
                    gripper: 1.0,
                    ..Default::default()
                }
            )
            .grasped
        );
    }

    #[test]
    fn closing_far_away_misses() {
        let cfg = SimConfig::default();
        let s = WorldState {
            obj_pos: [0.5, 0.5],
            ..at_object()
        };
        let n = cfg.step(
            &s,
            &EnvAction {
                gripper: 1.0,
                ..Default::default()
            },
        );
        assert!(!n.grasped && n.gripper_closed);
    }

    #[test]
    fn positions_stay_in_workspace() {
        let cfg = SimConfig::default();
        let mut s = WorldState {
            ee_pos: [0.99, -0.99],
            ..at_object()
        };
        s = cfg.step(
            &s,
            &EnvAction {
                d_pos: [0.05, -0.05],
                ..Default::default()
            },
        );
        assert_eq!(s.ee_pos, [1.0, -1.0]);
    }

    #[test]
    fn initial_states_are_seeded_and_in_bounds() {
        let cfg = SimConfig::default();
        for seed in 0..200 {
            let s = cfg.initial_state(seed);
            assert_eq!(s, cfg.initial_state(seed));
            for p in [s.ee_pos, s.obj_pos, s.goal_pos] {
                assert!(p.iter().all(|v| v.abs() <= 1.0));
            }
            assert!(!cfg.delivered(&s));
        }
    }

    #[test]
    fn observation_layout() {
        let cfg = SimConfig::default();
        let s = WorldState {
            ee_pos: [0.0, 0.0],
            obj_pos: [0.3, -0.4],
            ..at_object()
        };
        let o = cfg.observe(&s);
        assert_eq!(o.len(), OBS_DIM);
        // unmoved: the first slot is empty, the second holds the offset
        assert!(o[..OFFSET_BLOCK].iter().all(|v| *v == 0.0));
        let b = &o[OFFSET_BLOCK..2 * OFFSET_BLOCK];
        assert_eq!(&b[..2], &[1.0, -1.0]);
        // hat weights sum to one and sit on the end nodes when clamped
        let hx = &b[2..2 + OFFSET_NODES];
        assert_eq!(hx[OFFSET_NODES - 1], 1.0);
        assert!((hx.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(&o[OBS_DIM - 4..], &[0.0, 0.0, 0.0, 1.0]);
        let moved = WorldState { moved: true, ..s };
        let m = cfg.observe(&moved);
        assert_eq!(&m[..OFFSET_BLOCK], b);
        assert!(m[OFFSET_BLOCK..2 * OFFSET_BLOCK].iter().all(|v| *v == 0.0));
        let at = WorldState {
            moved: true,
            ..at_object()
        };
        assert_eq!(&cfg.observe(&at)[OBS_DIM - 4..], &[1.0, 0.0, 0.0, 0.0]);
    }
}
