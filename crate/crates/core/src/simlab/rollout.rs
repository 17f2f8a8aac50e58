use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{scripted_expert, EnvAction, SimConfig, WorldState, ACTION_DIMS};
use crate::codec::ActionCodec;
use crate::policy::TokenPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("policy timeout")]
    Timeout,
    #[error("policy error: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointReply {
    pub action: Vec<f64>,
    pub tokens: Option<Vec<u32>>,
    /// Wall-clock seconds the query took.
    pub latency_s: f64,
}

/// Anything that turns an observation into an action.
pub trait PolicyEndpoint {
    fn query(
        &mut self,
        state: &WorldState,
        obs: &[f64],
        instruction: &str,
    ) -> Result<EndpointReply, EndpointError>;

    fn reset(&mut self) -> Result<(), EndpointError> {
        Ok(())
    }
}

/// The scripted expert; reads the full world state.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertEndpoint {
    pub cfg: SimConfig,
}

impl PolicyEndpoint for ExpertEndpoint {
    fn query(
        &mut self,
        state: &WorldState,
        _obs: &[f64],
        _instruction: &str,
    ) -> Result<EndpointReply, EndpointError> {
        Ok(EndpointReply {
            action: scripted_expert(&self.cfg, state).to_vec(),
            tokens: None,
            latency_s: 0.0,
        })
    }
}

/// An in-process token policy.
#[derive(Debug, Clone)]
pub struct LocalPolicyEndpoint {
    pub policy: TokenPolicy,
    pub codec: ActionCodec,
}

impl PolicyEndpoint for LocalPolicyEndpoint {
    fn query(
        &mut self,
        _state: &WorldState,
        obs: &[f64],
        instruction: &str,
    ) -> Result<EndpointReply, EndpointError> {
        let start = Instant::now();
        let p = self
            .policy
            .predict(obs, instruction, &self.codec)
            .map_err(|e| EndpointError::Failed(e.to_string()))?;
        Ok(EndpointReply {
            action: p.action,
            tokens: Some(p.tokens),
            latency_s: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// One tick per prediction; the world waits for the policy.
    Blocking,
    /// The world ticks at `control_hz` and repeats the last action while a
    /// prediction is pending.
    NonBlocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerMode {
    pub mode: ControlMode,
    pub control_hz: f64,
    /// Modeled prediction rate; `None` uses each query's measured latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_hz: Option<f64>,
}

impl ControllerMode {
    pub fn blocking(control_hz: f64) -> Self {
        Self {
            mode: ControlMode::Blocking,
            control_hz,
            policy_hz: None,
        }
    }

    pub fn non_blocking(control_hz: f64, policy_hz: f64) -> Self {
        Self {
            mode: ControlMode::NonBlocking,
            control_hz,
            policy_hz: Some(policy_hz),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.control_hz.is_finite() && self.control_hz > 0.0) {
            return Err(format!("control_hz must be > 0, got {}", self.control_hz));
        }
        if let Some(hz) = self.policy_hz {
            if !(hz.is_finite() && hz > 0.0) {
                return Err(format!("policy_hz must be > 0, got {hz}"));
            }
        }
        Ok(())
    }

    /// Ticks that elapse while a prediction of latency `latency_s` is pending.
    pub fn stale_ticks(&self, latency_s: f64) -> u32 {
        let latency = self.policy_hz.map_or(latency_s, |hz| 1.0 / hz);
        (latency * self.control_hz).round().max(0.0) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub score: f64,
    pub reason: String,
}

impl TaskOutcome {
    fn delivered() -> Self {
        Self {
            score: 1.0,
            reason: "delivered".into(),
        }
    }

    fn partial() -> Self {
        Self {
            score: 0.5,
            reason: "grasped but not delivered".into(),
        }
    }

    fn failed(reason: impl Into<String>) -> Self {
        Self {
            score: 0.0,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u32,
    pub action: EnvAction,
    pub state: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// World tick at which the observation was taken.
    pub tick: u32,
    pub latency_s: f64,
    pub stale_ticks: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub outcome: TaskOutcome,
    pub initial: WorldState,
    pub final_state: WorldState,
    pub trajectory: Vec<TickRecord>,
    pub predictions: Vec<PredictionRecord>,
    /// At least one query was answered.
    pub answered: bool,
}

/// Number of trailing ticks inspected by [`RolloutResult::frozen`].
pub const FREEZE_WINDOW: usize = 20;

impl RolloutResult {
    /// Failed rollout whose last [`FREEZE_WINDOW`] executed commands all
    /// stayed under `rest_fraction * max_step` on both axes.
    pub fn frozen(&self, cfg: &SimConfig) -> bool {
        if self.outcome.score >= 1.0 || self.trajectory.len() < FREEZE_WINDOW {
            return false;
        }
        let limit = cfg.rest_fraction * cfg.max_step;
        self.trajectory[self.trajectory.len() - FREEZE_WINDOW..]
            .iter()
            .all(|t| t.action.d_pos.iter().all(|v| v.abs() < limit))
    }

    pub fn mean_latency_s(&self) -> f64 {
        if self.predictions.is_empty() {
            0.0
        } else {
            self.predictions.iter().map(|p| p.latency_s).sum::<f64>()
                / self.predictions.len() as f64
        }
    }
}

struct Runner<'a> {
    cfg: &'a SimConfig,
    state: WorldState,
    ever_grasped: bool,
    trajectory: Vec<TickRecord>,
}

impl Runner<'_> {
    fn done(&self) -> bool {
        self.cfg.delivered(&self.state) || self.state.tick >= self.cfg.t_max
    }

    fn tick(&mut self, action: &EnvAction) {
        self.state = self.cfg.step(&self.state, action);
        self.ever_grasped |= self.state.grasped;
        self.trajectory.push(TickRecord {
            tick: self.state.tick,
            action: *action,
            state: self.state,
        });
    }

    fn outcome(&self) -> TaskOutcome {
        if self.cfg.delivered(&self.state) {
            TaskOutcome::delivered()
        } else if self.ever_grasped {
            TaskOutcome::partial()
        } else {
            TaskOutcome::failed("never grasped")
        }
    }
}

/// Runs one episode from `env_seed` against `endpoint`.
///
/// Blocking control advances exactly one tick per prediction. Non-blocking
/// control issues a prediction, keeps executing the previous command for
/// `round(latency * control_hz)` ticks while it is pending, then switches to
/// the new command. A prediction that arrives within the same tick
/// (`round(...) == 0`) is executed immediately for one tick.
pub fn rollout(
    endpoint: &mut dyn PolicyEndpoint,
    env_seed: u64,
    cfg: &SimConfig,
    mode: &ControllerMode,
    instruction: &str,
) -> RolloutResult {
    let initial = cfg.initial_state(env_seed);
    let mut run = Runner {
        cfg,
        state: initial,
        ever_grasped: false,
        trajectory: Vec::with_capacity(cfg.t_max as usize),
    };
    let mut predictions = Vec::new();
    let mut current = EnvAction::default();
    let mut error = None;

    if let Err(e) = endpoint.reset() {
        error = Some(e);
    }

    while error.is_none() && !run.done() {
        let obs = cfg.observe(&run.state);
        let reply = match endpoint.query(&run.state, &obs, instruction) {
            Ok(r) if r.action.len() == ACTION_DIMS => r,
            Ok(r) => {
                error = Some(EndpointError::Failed(format!(
                    "endpoint returned {} action dims, expected {ACTION_DIMS}",
                    r.action.len()
                )));
                break;
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        let action = EnvAction::from_slice(&reply.action);
        let stale = match mode.mode {
            ControlMode::Blocking => 0,
            ControlMode::NonBlocking => mode.stale_ticks(reply.latency_s),
        };
        predictions.push(PredictionRecord {
            tick: run.state.tick,
            latency_s: reply.latency_s,
            stale_ticks: stale,
            tokens: reply.tokens,
        });
        if stale == 0 {
            run.tick(&action);
        } else {
            for _ in 0..stale {
                if run.done() {
                    break;
                }
                run.tick(&current);
            }
        }
        current = action;
    }

    let answered = !predictions.is_empty();
    let outcome = match error {
        Some(EndpointError::Timeout) => TaskOutcome::failed("policy timeout"),
        Some(e @ EndpointError::Failed(_)) => TaskOutcome::failed(e.to_string()),
        None => run.outcome(),
    };
    RolloutResult {
        outcome,
        initial,
        final_state: run.state,
        trajectory: run.trajectory,
        predictions,
        answered,
    }
}
