use super::{dist, EnvAction, SimConfig, WorldState};

/// Proportional gain of the expert's position loop.
///
/// Below one so the loop stays damped when its commands arrive a tick late.
pub const EXPERT_GAIN: f64 = 0.5;
/// Jog speeds per `max_step`; expert steps are multiples of `max_step / JOG_LEVELS`.
pub const JOG_LEVELS: f64 = 8.0;

/// Rounds a per-axis step to the nearest jog speed and clamps it to `max_step`.
pub(crate) fn jog(v: f64, max_step: f64) -> f64 {
    let q = max_step / JOG_LEVELS;
    ((v / q).round() * q).clamp(-max_step, max_step)
}

fn toward(from: [f64; 2], to: [f64; 2], max_step: f64) -> [f64; 2] {
    [0, 1].map(|i| jog(EXPERT_GAIN * (to[i] - from[i]), max_step))
}

/// Proportional pick-and-place controller with quantized jog speeds.
///
/// Approaches the object with the gripper open, closes once within the grasp
/// radius, carries the object to the goal and opens within half the goal
/// radius. Gripper switches keep easing toward the current target, and a
/// stray closed gripper is reopened in place.
pub fn scripted_expert(cfg: &SimConfig, state: &WorldState) -> EnvAction {
    let hold = |gripper: f64| EnvAction {
        gripper,
        ..Default::default()
    };
    if !state.grasped {
        if state.gripper_closed {
            hold(0.0)
        } else if dist(state.ee_pos, state.obj_pos) <= cfg.grasp_radius {
            EnvAction {
                d_pos: toward(state.ee_pos, state.obj_pos, cfg.max_step),
                gripper: 1.0,
                ..Default::default()
            }
        } else {
            EnvAction {
                d_pos: toward(state.ee_pos, state.obj_pos, cfg.max_step),
                gripper: 0.0,
                ..Default::default()
            }
        }
    } else if dist(state.ee_pos, state.goal_pos) <= 0.5 * cfg.goal_radius {
        EnvAction {
            d_pos: toward(state.ee_pos, state.goal_pos, cfg.max_step),
            gripper: 0.0,
            ..Default::default()
        }
    } else {
        EnvAction {
            d_pos: toward(state.ee_pos, state.goal_pos, cfg.max_step),
            gripper: 1.0,
            ..Default::default()
        }
    }
}
