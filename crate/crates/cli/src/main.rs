//! `vla-rig`: collect demonstrations, curate, fit the action codec, train,
//! serve, benchmark and evaluate.
//!
//! Every command accepts `--config <file.json>` whose keys mirror the
//! command's options; flags given on the command line override the file.
//! Successful runs print a JSON summary on stdout and log to stderr.

mod commands;
mod config;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use vla_rig::eval::{EvalPlan, ReportFormat};
use vla_rig::policy::DecodeMode;

use commands::*;
use config::{flags, merge};

#[derive(Parser, Debug)]
#[command(name = "vla-rig", version, about = "Token-policy robot learning rig")]
struct Cli {
    /// Master seed for the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output artifact path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record scripted-expert demonstrations as an episode file.
    Collect(CollectArgs),
    /// Apply curation filters to an episode file.
    Curate(CurateArgs),
    /// Draw from a weighted dataset mixture and report the frequencies.
    SampleMixture(MixtureArgs),
    /// Fit the per-dimension action codec to a dataset.
    FitCodec(FitCodecArgs),
    /// Train the token policy.
    Train(TrainArgs),
    /// Serve a policy over TCP.
    Serve(ServeArgs),
    /// Measure the request rate a server sustains with one request in flight.
    Bench(BenchArgs),
    /// Run a paired A/B evaluation plan (the plan is the `--config` file).
    Eval(EvalArgs),
    /// Render a saved evaluation report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[arg(long)]
    n_episodes: Option<usize>,
    /// Log an all-zero first action (true/false).
    #[arg(long)]
    idle_first_step: Option<bool>,
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    gate: Option<bool>,
    #[arg(long)]
    replay: Option<bool>,
    #[arg(long)]
    drop_first: Option<bool>,
    #[arg(long)]
    noop: Option<bool>,
}

#[derive(Args, Debug)]
struct MixtureArgs {
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Episode file to pool by dataset name (repeatable).
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    draws: Option<u64>,
    #[arg(long)]
    progress: Option<f64>,
}

#[derive(Args, Debug)]
struct FitCodecArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    vocab_size: Option<u32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    decode_mode: Option<DecodeMode>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Bind address.
    #[arg(long, env = ADDR_ENV)]
    addr: Option<String>,
    /// Serve the zero action without loading a policy.
    #[arg(long)]
    stub: bool,
    /// Delay injected before every prediction, in milliseconds.
    #[arg(long)]
    delay_ms: Option<f64>,
    /// Profile label reported by `info`.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Server address.
    #[arg(long, env = ADDR_ENV)]
    addr: Option<String>,
    /// Number of requests.
    #[arg(long)]
    n: Option<u64>,
    /// Run for this many seconds instead of a fixed count.
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    obs_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Evaluation plan; same as `--config`.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    n_trials: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Saved evaluation report (JSON).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

fn some<T: serde::Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|x| json!(x))
}

pub(crate) fn print_json(v: &Value) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(v)?)?;
    stdout.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = cli.config.as_deref();
    let out = some(&cli.out);
    let seed = some(&cli.seed);
    let summary = match cli.command {
        Command::Collect(a) => {
            let (cfg, raw): (CollectConfig, _) = merge(
                file,
                flags([
                    ("n_episodes", some(&a.n_episodes)),
                    ("idle_first_step", some(&a.idle_first_step)),
                    ("seed", seed),
                    ("out", out),
                ]),
            )?;
            collect(&cfg, &raw)?
        }
        Command::Curate(a) => {
            let (cfg, raw): (CurateConfig, _) = merge(
                file,
                flags([
                    ("dataset", some(&a.dataset)),
                    ("gate", some(&a.gate)),
                    ("replay", some(&a.replay)),
                    ("drop_first", some(&a.drop_first)),
                    ("noop", some(&a.noop)),
                    ("out", out),
                ]),
            )?;
            curate(&cfg, &raw)?
        }
        Command::SampleMixture(a) => {
            let datasets = (!a.datasets.is_empty()).then(|| json!(a.datasets));
            let (cfg, raw): (MixtureConfig, _) = merge(
                file,
                flags([
                    ("mixture", some(&a.mixture)),
                    ("datasets", datasets),
                    ("draws", some(&a.draws)),
                    ("progress", some(&a.progress)),
                    ("seed", seed),
                    ("out", out),
                ]),
            )?;
            sample_mixture(&cfg, &raw)?
        }
        Command::FitCodec(a) => {
            let (cfg, raw): (FitCodecConfig, _) = merge(
                file,
                flags([
                    ("dataset", some(&a.dataset)),
                    ("bins", some(&a.bins)),
                    ("vocab_size", some(&a.vocab_size)),
                    ("out", out),
                ]),
            )?;
            fit_codec(&cfg, &raw)?
        }
        Command::Train(a) => {
            let train = flags([
                ("epochs", some(&a.epochs)),
                ("learning_rate", some(&a.lr)),
                ("batch_size", some(&a.batch_size)),
                ("target_token_accuracy", some(&a.target_accuracy)),
                ("rng_seed", seed),
            ]);
            let (cfg, raw): (TrainCmdConfig, _) = merge(
                file,
                flags([
                    ("dataset", some(&a.dataset)),
                    ("codec", some(&a.codec)),
                    ("decode_mode", some(&a.decode_mode)),
                    ("train", Some(train)),
                    ("out", out),
                ]),
            )?;
            train_cmd(&cfg, &raw)?
        }
        Command::Serve(a) => {
            let delay_us = a
                .delay_ms
                .map(|ms| json!((ms * 1000.0).round().max(0.0) as u64));
            let profile = flags([("injected_delay_us", delay_us), ("label", some(&a.label))]);
            let (cfg, _): (ServeConfig, _) = merge(
                file,
                flags([
                    ("policy", some(&a.policy)),
                    ("codec", some(&a.codec)),
                    ("addr", some(&a.addr)),
                    ("stub", a.stub.then_some(json!(true))),
                    ("profile", Some(profile)),
                ]),
            )?;
            serve_cmd(&cfg)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Bench(a) => {
            let (cfg, raw): (BenchConfig, _) = merge(
                file,
                flags([
                    ("addr", some(&a.addr)),
                    ("n", some(&a.n)),
                    ("duration_s", some(&a.duration_s)),
                    ("obs_dim", some(&a.obs_dim)),
                    ("out", out),
                ]),
            )?;
            bench_cmd(&cfg, &raw)?
        }
        Command::Eval(a) => {
            let plan_file = a.plan.as_deref().or(file);
            if plan_file.is_none() {
                anyhow::bail!("eval needs a plan (--plan or --config)");
            }
            let plan_layer = flags([("master_seed", seed), ("n_trials", some(&a.n_trials))]);
            let plan = merge_plan(plan_file.unwrap(), plan_layer)?;
            let raw = serde_json::to_value(&plan)?;
            let (summary, report) = eval_cmd(&plan, &raw, cli.out.as_deref())?;
            print_json(&summary)?;
            return Ok(if report.any_invalid() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            });
        }
        Command::Report(a) => {
            let format = match a.format {
                Format::Table => ReportFormat::Table,
                Format::Json => ReportFormat::Json,
            };
            print!("{}", report_cmd(&a.input, format)?);
            return Ok(ExitCode::SUCCESS);
        }
    };
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

/// An evaluation plan has no defaults, so the file is required and flags overlay it.
fn merge_plan(path: &std::path::Path, layer: Value) -> Result<EvalPlan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading plan {}: {e}", path.display()))?;
    let mut plan: Value = serde_json::from_str(&text)?;
    if let (Value::Object(p), Value::Object(l)) = (&mut plan, layer) {
        p.extend(l);
    }
    let plan: EvalPlan = serde_json::from_value(plan)?;
    plan.validate()?;
    Ok(plan)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
