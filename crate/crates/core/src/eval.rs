//! Paired A/B evaluation.
//!
//! Trial `i` of a plan starts every policy from the world seeded with
//! `derive_seed(master_seed, i)`, so arms differ only in the policy. Scores
//! keep their partial credit and are summarised as mean ± standard error,
//! where the standard error is the sample standard deviation (n - 1
//! denominator) over `sqrt(n)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::ActionCodec;
use crate::policy::{DecodeMode, TokenPolicy};
use crate::seed::derive_seed;
use crate::serve::{RemoteEndpoint, DEFAULT_TIMEOUT};
use crate::simlab::{
    rollout, ControllerMode, EndpointError, EndpointReply, ExpertEndpoint, LocalPolicyEndpoint,
    PolicyEndpoint, SimConfig, WorldState, INSTRUCTIONS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("eval i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("eval json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where a policy under evaluation lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointSpec {
    Expert,
    Local {
        policy: PathBuf,
        codec: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decode_mode: Option<DecodeMode>,
    },
    Remote {
        addr: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    #[serde(flatten)]
    pub endpoint: EndpointSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub task_name: String,
    pub n_trials: usize,
    pub master_seed: u64,
    pub mode: ControllerMode,
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub sim: SimConfig,
    /// Instruction for every trial; by default trial `i` uses the `i % 3`-th
    /// demonstration phrasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl EvalPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_trials == 0 {
            return Err(EvalError::Validation("n_trials must be >= 1".into()));
        }
        if self.policies.is_empty() {
            return Err(EvalError::Validation("plan has no policies".into()));
        }
        let mut names: Vec<&str> = self.policies.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(EvalError::Validation(format!(
                "duplicate policy name {:?}",
                w[0]
            )));
        }
        self.mode.validate().map_err(EvalError::Validation)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Seed of trial `index`, shared by every policy.
    pub fn trial_seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }

    pub fn instruction(&self, index: usize) -> &str {
        self.instruction
            .as_deref()
            .unwrap_or(INSTRUCTIONS[index % INSTRUCTIONS.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub policy: String,
    pub trial_index: usize,
    pub seed: u64,
    pub score: f64,
    pub reason: String,
    pub initial: WorldState,
    /// The endpoint answered at least one query.
    pub answered: bool,
    pub frozen: bool,
    pub predictions: usize,
    pub mean_latency_s: f64,
    pub max_latency_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error of per-rollout scores.
pub fn aggregate(scores: &[f64]) -> Result<Aggregate, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Validation("aggregate of no scores".into()));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let stderr = if n == 1 {
        0.0
    } else {
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(Aggregate { mean, stderr, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub name: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// No trial got a single answer from the endpoint.
    pub invalid: bool,
    pub frozen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_name: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub mode: ControllerMode,
    /// One entry per policy, in plan order.
    pub policies: Vec<PolicySummary>,
    /// `scores[trial][policy]`, policies in plan order.
    pub scores: Vec<Vec<f64>>,
    pub records: Vec<RolloutRecord>,
}

impl EvalReport {
    pub fn any_invalid(&self) -> bool {
        self.policies.iter().any(|p| p.invalid)
    }

    pub fn summary(&self, name: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Stands in for an endpoint that could not be opened.
struct Unavailable(String);

impl PolicyEndpoint for Unavailable {
    fn query(
        &mut self,
        _: &WorldState,
        _: &[f64],
        _: &str,
    ) -> Result<EndpointReply, EndpointError> {
        Err(EndpointError::Failed(self.0.clone()))
    }

    fn reset(&mut self) -> Result<(), EndpointError> {
        Err(EndpointError::Failed(self.0.clone()))
    }
}

fn open_endpoint(spec: &EndpointSpec, cfg: &SimConfig) -> Box<dyn PolicyEndpoint> {
    let opened: Result<Box<dyn PolicyEndpoint>, String> = match spec {
        EndpointSpec::Expert => Ok(Box::new(ExpertEndpoint { cfg: *cfg })),
        EndpointSpec::Local {
            policy,
            codec,
            decode_mode,
        } => TokenPolicy::load(policy)
            .map_err(|e| e.to_string())
            .and_then(|p| {
                let codec = ActionCodec::load(codec).map_err(|e| e.to_string())?;
                let policy = match decode_mode {
                    Some(m) => p.with_decode_mode(*m),
                    None => p,
                };
                Ok(Box::new(LocalPolicyEndpoint { policy, codec }) as Box<dyn PolicyEndpoint>)
            }),
        EndpointSpec::Remote { addr, timeout_ms } => {
            let timeout = timeout_ms.map_or(DEFAULT_TIMEOUT, Duration::from_millis);
            RemoteEndpoint::connect(addr.as_str(), timeout)
                .map(|e| Box::new(e) as Box<dyn PolicyEndpoint>)
                .map_err(|e| e.to_string())
        }
    };
    opened.unwrap_or_else(|e| {
        warn!("endpoint unavailable: {e}");
        Box::new(Unavailable(format!("endpoint unavailable: {e}")))
    })
}

/// Opens every endpoint in the plan and runs it.
pub fn run_eval(plan: &EvalPlan) -> Result<EvalReport, EvalError> {
    plan.validate()?;
    let mut endpoints: Vec<(String, Box<dyn PolicyEndpoint>)> = plan
        .policies
        .iter()
        .map(|p| (p.name.clone(), open_endpoint(&p.endpoint, &plan.sim)))
        .collect();
    run_eval_with(plan, &mut endpoints)
}

/// Runs `plan` against already opened endpoints; the plan's policy specs are
/// only used for validation.
pub fn run_eval_with(
    plan: &EvalPlan,
    endpoints: &mut [(String, Box<dyn PolicyEndpoint>)],
) -> Result<EvalReport, EvalError> {
    plan.validate()?;
    let names: Vec<&str> = endpoints.iter().map(|(n, _)| n.as_str()).collect();
    let planned: Vec<&str> = plan.policies.iter().map(|p| p.name.as_str()).collect();
    if names != planned {
        return Err(EvalError::Validation(format!(
            "endpoints {names:?} do not match plan policies {planned:?}"
        )));
    }

    let mut records = Vec::with_capacity(plan.n_trials * endpoints.len());
    let mut scores = Vec::with_capacity(plan.n_trials);
    for trial in 0..plan.n_trials {
        let seed = plan.trial_seed(trial);
        let instruction = plan.instruction(trial);
        let mut row = Vec::with_capacity(endpoints.len());
        for (name, endpoint) in endpoints.iter_mut() {
            let r = rollout(endpoint.as_mut(), seed, &plan.sim, &plan.mode, instruction);
            row.push(r.outcome.score);
            records.push(RolloutRecord {
                policy: name.clone(),
                trial_index: trial,
                seed,
                score: r.outcome.score,
                reason: r.outcome.reason.clone(),
                initial: r.initial,
                answered: r.answered,
                frozen: r.frozen(&plan.sim),
                predictions: r.predictions.len(),
                mean_latency_s: r.mean_latency_s(),
                max_latency_s: r
                    .predictions
                    .iter()
                    .map(|p| p.latency_s)
                    .fold(0.0, f64::max),
            });
        }
        scores.push(row);
    }

    let mut policies = Vec::with_capacity(endpoints.len());
    for (k, (name, _)) in endpoints.iter().enumerate() {
        let column: Vec<f64> = scores.iter().map(|row| row[k]).collect();
        let agg = aggregate(&column)?;
        let mine = || records.iter().filter(|r| &r.policy == name);
        let summary = PolicySummary {
            name: name.clone(),
            mean: agg.mean,
            stderr: agg.stderr,
            n: agg.n,
            invalid: !mine().any(|r| r.answered),
            frozen: mine().filter(|r| r.frozen).count(),
        };
        info!(
            "{}: {} frozen {}",
            name,
            format_stat(summary.mean, summary.stderr, summary.n),
            summary.frozen
        );
        policies.push(summary);
    }

    Ok(EvalReport {
        task_name: plan.task_name.clone(),
        master_seed: plan.master_seed,
        n_trials: plan.n_trials,
        mode: plan.mode,
        policies,
        scores,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Json,
}

/// `"70.6 ± 3.2% (170)"`.
pub fn format_stat(mean: f64, stderr: f64, n: usize) -> String {
    format!("{:.1} ± {:.1}% ({n})", mean * 100.0, stderr * 100.0)
}

/// Renders a report; table rows are sorted by mean, best first.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String, EvalError> {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Table => Ok(render_table(report)),
    }
}

fn render_table(report: &EvalReport) -> String {
    let mut rows: Vec<&PolicySummary> = report.policies.iter().collect();
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.name.cmp(&b.name)));
    let width = rows
        .iter()
        .map(|p| p.name.len())
        .max()
        .unwrap_or(0)
        .max("policy".len());
    let mut out = String::new();
    let _ = writeln!(out, "{} (seed {})", report.task_name, report.master_seed);
    let _ = writeln!(out, "{:<width$}  mean success", "policy");
    for p in rows {
        let stat = if p.invalid {
            format!("invalid ({})", p.n)
        } else {
            format_stat(p.mean, p.stderr, p.n)
        };
        let _ = writeln!(out, "{:<width$}  {stat}", p.name);
    }
    out
}
