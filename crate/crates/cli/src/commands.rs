use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use vla_rig::codec::fit_codec_to_actions;
use vla_rig::data::{
    curation_gate, drop_first_transition, filter_failed_replays, filter_noops, read_episodes,
    write_episodes, ActionLayout, Episode, EpisodeMeta, MixtureSampler, MixtureSpec,
    NoOpThresholds,
};
use vla_rig::eval::{render_report, run_eval, EvalPlan, EvalReport, ReportFormat};
use vla_rig::policy::{
    episode_samples, train, DecodeMode, FeatureEncoder, TokenPolicy, TrainConfig, DEFAULT_INSTR_DIM,
};
use vla_rig::serve::{
    bench, serve, BenchRequest, BenchStop, InferenceBackend, LatencyProfile, LocalBackend,
    StubBackend,
};
use vla_rig::simlab::{collect_demonstrations, replay_success, SimConfig, INSTRUCTIONS, OBS_DIM};
use vla_rig::{ActionCodec, ActionSpec, TokenMap};

use crate::manifest::write_manifest;

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().with_context(|| format!("missing {what}"))
}

fn total_steps(episodes: &[Episode]) -> usize {
    episodes.iter().map(|e| e.steps.len()).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub n_episodes: usize,
    /// Seed of the first episode; episode `i` uses `seed + i`.
    pub seed: u64,
    /// Log an all-zero action before the expert starts, as raw teleoperation logs do.
    pub idle_first_step: bool,
    pub out: Option<PathBuf>,
    pub sim: SimConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_episodes: 50,
            seed: 0,
            idle_first_step: true,
            out: None,
            sim: SimConfig::default(),
        }
    }
}

pub fn collect(cfg: &CollectConfig, raw: &Value) -> Result<Value> {
    let out = required(&cfg.out, "--out")?;
    let episodes = collect_demonstrations(&cfg.sim, cfg.n_episodes, cfg.seed, cfg.idle_first_step);
    let flags: Vec<bool> = episodes
        .iter()
        .map(|e| replay_success(&cfg.sim, e).unwrap_or(false))
        .collect();
    let (_, replay) = filter_failed_replays(episodes.clone(), &flags)?;
    write_episodes(out, &episodes).with_context(|| format!("writing {}", out.display()))?;
    let manifest = write_manifest("collect", raw, vec![cfg.seed], &[], &[out])?;
    Ok(json!({
        "command": "collect",
        "episodes": episodes.len(),
        "steps": total_steps(&episodes),
        "replay": replay,
        "out": out,
        "manifest": manifest,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Keep only third-person-camera, single-arm end-effector episodes.
    pub gate: bool,
    /// Replay episodes that carry a simulator seed and drop the failures.
    pub replay: bool,
    pub drop_first: bool,
    pub noop: bool,
    pub thresholds: NoOpThresholds,
    pub layout: ActionLayout,
    pub sim: SimConfig,
}

impl Default for CurateConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            gate: true,
            replay: true,
            drop_first: true,
            noop: true,
            thresholds: NoOpThresholds::default(),
            layout: ActionLayout::default(),
            sim: SimConfig::default(),
        }
    }
}

pub fn curate(cfg: &CurateConfig, raw: &Value) -> Result<Value> {
    let input = required(&cfg.dataset, "--dataset")?;
    let out = required(&cfg.out, "--out")?;
    let episodes = read_episodes(input)?;
    let episodes_in = episodes.len();
    let steps_in = total_steps(&episodes);

    let mut kept: Vec<Episode> = if cfg.gate {
        episodes.into_iter().filter(curation_gate).collect()
    } else {
        episodes
    };
    let gated_out = episodes_in - kept.len();

    let mut replay = None;
    if cfg.replay {
        // episodes without a seed cannot be replayed and are kept
        let flags: Vec<bool> = kept
            .iter()
            .map(|e| replay_success(&cfg.sim, e).unwrap_or(true))
            .collect();
        let (survivors, report) = filter_failed_replays(kept, &flags)?;
        kept = survivors;
        replay = Some(report);
    }
    let steps_after_episode_filters = total_steps(&kept);

    let mut first_removed = 0;
    if cfg.drop_first {
        let before = total_steps(&kept);
        kept = kept.iter().filter_map(drop_first_transition).collect();
        first_removed = before - total_steps(&kept);
    }
    let mut noop_removed = 0;
    if cfg.noop {
        let before = total_steps(&kept);
        kept = kept
            .iter()
            .map(|e| filter_noops(e, &cfg.thresholds, &cfg.layout))
            .collect::<Result<_, _>>()?;
        kept.retain(|e| !e.steps.is_empty());
        noop_removed = before - total_steps(&kept);
    }

    write_episodes(out, &kept).with_context(|| format!("writing {}", out.display()))?;
    let manifest = write_manifest("curate", raw, vec![], &[input], &[out])?;
    let steps_out = total_steps(&kept);
    Ok(json!({
        "command": "curate",
        "episodes_in": episodes_in,
        "episodes_out": kept.len(),
        "gated_out": gated_out,
        "replay": replay,
        "steps_in": steps_in,
        "steps_out": steps_out,
        "first_transition_removed": first_removed,
        "noop_removed": noop_removed,
        "removed_steps": steps_after_episode_filters - steps_out,
        "out": out,
        "manifest": manifest,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfig {
    /// Mixture spec file; the bundled OpenX mixture when absent.
    pub mixture: Option<PathBuf>,
    /// Episode files pooled by `dataset_name`; without any, each mixture
    /// entry is represented by a single placeholder episode.
    pub datasets: Vec<PathBuf>,
    pub draws: u64,
    pub progress: f64,
    pub seed: u64,
    /// Writes the drawn episodes when datasets are given.
    pub out: Option<PathBuf>,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            mixture: None,
            datasets: Vec::new(),
            draws: 100_000,
            progress: 0.0,
            seed: 0,
            out: None,
        }
    }
}

pub fn sample_mixture(cfg: &MixtureConfig, raw: &Value) -> Result<Value> {
    if !(0.0..=1.0).contains(&cfg.progress) {
        bail!("progress must be in [0, 1], got {}", cfg.progress);
    }
    let spec = match &cfg.mixture {
        Some(p) => MixtureSpec::load(p)?,
        None => MixtureSpec::openx(),
    };
    let mut stores: BTreeMap<String, Vec<Episode>> = BTreeMap::new();
    for path in &cfg.datasets {
        for ep in read_episodes(path)? {
            stores.entry(ep.dataset_name.clone()).or_default().push(ep);
        }
    }
    let placeholders = cfg.datasets.is_empty();
    if placeholders {
        for e in &spec.entries {
            stores.insert(
                e.dataset_name.clone(),
                vec![Episode {
                    dataset_name: e.dataset_name.clone(),
                    instruction: String::new(),
                    steps: Vec::new(),
                    meta: EpisodeMeta::default(),
                }],
            );
        }
    }
    let sampler = MixtureSampler::new(&spec, &stores)?;
    let weights = sampler.spec().effective_weights(cfg.progress)?;
    let mut counts = vec![0u64; weights.len()];
    let mut drawn = Vec::new();
    for i in 0..cfg.draws {
        let d = sampler.draw(cfg.progress, cfg.seed, i);
        counts[d.entry] += 1;
        if cfg.out.is_some() && !placeholders {
            drawn.push(&stores[sampler.dataset_name(d.entry)][d.episode]);
        }
    }
    let n = cfg.draws.max(1) as f64;
    let l1: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| (c as f64 / n - w).abs())
        .sum();
    let entries: Vec<Value> = spec
        .entries
        .iter()
        .zip(counts.iter().zip(&weights))
        .map(|(e, (&c, w))| {
            json!({"dataset_name": e.dataset_name, "weight": w, "count": c, "frequency": c as f64 / n})
        })
        .collect();
    let mut summary = json!({
        "command": "sample-mixture",
        "draws": cfg.draws,
        "progress": cfg.progress,
        "removal_active": sampler.spec().removal_active(cfg.progress),
        "l1_distance": l1,
        "entries": entries,
    });
    if let Some(out) = &cfg.out {
        if placeholders {
            bail!("--out needs at least one --dataset to draw episodes from");
        }
        write_episodes(out, drawn).with_context(|| format!("writing {}", out.display()))?;
        let inputs: Vec<&Path> = cfg.datasets.iter().map(PathBuf::as_path).collect();
        summary["out"] = json!(out);
        summary["manifest"] = json!(write_manifest(
            "sample-mixture",
            raw,
            vec![cfg.seed],
            &inputs,
            &[out]
        )?);
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCodecConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub bins: usize,
    pub vocab_size: u32,
}

impl Default for FitCodecConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            bins: 256,
            vocab_size: 32_000,
        }
    }
}

pub fn fit_codec(cfg: &FitCodecConfig, raw: &Value) -> Result<Value> {
    let input = required(&cfg.dataset, "--dataset")?;
    let out = required(&cfg.out, "--out")?;
    let episodes = read_episodes(input)?;
    let n_dims = episodes
        .iter()
        .flat_map(|e| e.steps.first())
        .map(|s| s.action.len())
        .next()
        .context("dataset has no steps")?;
    let spec = ActionSpec::new(n_dims, cfg.bins)?;
    let token_map = TokenMap::new(cfg.vocab_size, cfg.bins as u32)?;
    let codec = fit_codec_to_actions(
        episodes
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.action.as_slice())),
        spec,
        token_map,
    )?;
    codec.save(out)?;
    let manifest = write_manifest("fit-codec", raw, vec![], &[input], &[out])?;
    Ok(json!({
        "command": "fit-codec",
        "steps": total_steps(&episodes),
        "n_dims": n_dims,
        "per_dim": codec.per_dim,
        "zero_action_tokens": codec.zero_action_tokens(),
        "out": out,
        "manifest": manifest,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub dataset: Option<PathBuf>,
    pub codec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub decode_mode: DecodeMode,
    pub instr_dim: usize,
    pub train: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            codec: None,
            out: None,
            decode_mode: DecodeMode::Dynamic,
            instr_dim: DEFAULT_INSTR_DIM,
            train: TrainConfig::default(),
        }
    }
}

pub fn train_cmd(cfg: &TrainCmdConfig, raw: &Value) -> Result<Value> {
    let dataset = required(&cfg.dataset, "--dataset")?;
    let codec_path = required(&cfg.codec, "--codec")?;
    let out = required(&cfg.out, "--out")?;
    let episodes = read_episodes(dataset)?;
    let codec = ActionCodec::load(codec_path)?;
    let obs_dim = episodes
        .iter()
        .flat_map(|e| e.steps.first())
        .map(|s| s.obs.len())
        .next()
        .context("dataset has no steps")?;
    let mut policy = TokenPolicy::new(
        codec.spec,
        FeatureEncoder::new(obs_dim, cfg.instr_dim),
        cfg.decode_mode,
    );
    let samples = episode_samples(&policy, &codec, &episodes)?;
    info!("training on {} samples", samples.len());
    let report = train(&mut policy, &samples, &cfg.train)?;
    policy.save(out)?;
    let manifest = write_manifest(
        "train",
        raw,
        vec![cfg.train.rng_seed],
        &[dataset, codec_path],
        &[out],
    )?;
    Ok(json!({
        "command": "train",
        "samples": samples.len(),
        "epochs_run": report.epochs.len(),
        "token_accuracy": report.final_accuracy(),
        "reached_target": report.reached_target,
        "epochs": report.epochs,
        "out": out,
        "manifest": manifest,
    }))
}

pub const ADDR_ENV: &str = "VLA_RIG_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub policy: Option<PathBuf>,
    pub codec: Option<PathBuf>,
    pub addr: String,
    /// Serve the zero action without a policy.
    pub stub: bool,
    pub stub_dims: usize,
    pub profile: LatencyProfile,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            policy: None,
            codec: None,
            addr: DEFAULT_ADDR.into(),
            stub: false,
            stub_dims: 7,
            profile: LatencyProfile::none(),
        }
    }
}

/// Binds, prints the listening summary, then serves until killed.
pub fn serve_cmd(cfg: &ServeConfig) -> Result<()> {
    let backend: Arc<dyn InferenceBackend> = if cfg.stub {
        Arc::new(StubBackend {
            n_dims: cfg.stub_dims,
        })
    } else {
        let policy = TokenPolicy::load(required(&cfg.policy, "--policy")?)?;
        let codec = ActionCodec::load(required(&cfg.codec, "--codec")?)?;
        Arc::new(LocalBackend::new(policy, codec)?)
    };
    let handle = serve(backend.clone(), cfg.addr.as_str(), cfg.profile.clone())?;
    crate::print_json(&json!({
        "command": "serve",
        "listening": handle.local_addr().to_string(),
        "n_dims": backend.n_dims(),
        "decode_mode": backend.decode_mode(),
        "profile": cfg.profile,
    }))?;
    handle.wait();
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub addr: String,
    /// Request count; ignored when `duration_s` is set.
    pub n: u64,
    pub duration_s: Option<f64>,
    pub obs_dim: usize,
    pub instruction: String,
    pub timeout_ms: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            addr: DEFAULT_ADDR.into(),
            n: 20,
            duration_s: None,
            obs_dim: OBS_DIM,
            instruction: INSTRUCTIONS[0].into(),
            timeout_ms: 10_000,
            out: None,
        }
    }
}

pub fn bench_cmd(cfg: &BenchConfig, raw: &Value) -> Result<Value> {
    let stop = match cfg.duration_s {
        Some(s) if s > 0.0 && s.is_finite() => BenchStop::Duration(Duration::from_secs_f64(s)),
        Some(s) => bail!("duration_s must be > 0, got {s}"),
        None => BenchStop::Count(cfg.n),
    };
    let request = BenchRequest {
        obs: vec![0.0; cfg.obs_dim],
        instruction: cfg.instruction.clone(),
    };
    let report = bench(
        cfg.addr.as_str(),
        &request,
        stop,
        Duration::from_millis(cfg.timeout_ms),
    )?;
    let mut summary = json!({"command": "bench", "addr": cfg.addr});
    merge_into(&mut summary, serde_json::to_value(&report)?);
    if let Some(out) = &cfg.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        summary["out"] = json!(out);
        summary["manifest"] = json!(write_manifest("bench", raw, vec![], &[], &[out])?);
    }
    Ok(summary)
}

fn merge_into(base: &mut Value, extra: Value) {
    if let (Value::Object(b), Value::Object(e)) = (base, extra) {
        b.extend(e);
    }
}

pub fn eval_cmd(plan: &EvalPlan, raw: &Value, out: Option<&Path>) -> Result<(Value, EvalReport)> {
    let report = run_eval(plan)?;
    let mut summary = json!({
        "command": "eval",
        "task_name": report.task_name,
        "n_trials": report.n_trials,
        "master_seed": report.master_seed,
        "policies": report.policies,
        "any_invalid": report.any_invalid(),
        "table": render_report(&report, ReportFormat::Table)?,
    });
    if let Some(out) = out {
        std::fs::write(out, report.to_json()? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        summary["out"] = json!(out);
        summary["manifest"] = json!(write_manifest(
            "eval",
            raw,
            vec![plan.master_seed],
            &[],
            &[out]
        )?);
    }
    Ok((summary, report))
}

pub fn report_cmd(input: &Path, format: ReportFormat) -> Result<String> {
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report = EvalReport::from_json(&text)?;
    Ok(render_report(&report, format)?)
}
