//! `ontorel`: build gold sets, run relation-classification strategies against
//! a model, and score, compare or replay the results.
//!
//! Exit status is 0 on success, 1 when a run fails, and 2 for bad arguments
//! or unreadable inputs.

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ontorel_core::backend::{BackendConfig, BackendError, HttpProvider, Provider, ScriptedBackend};
use ontorel_core::metrics::{diff_reports, format3};
use ontorel_core::parser::ParsePolicy;
use ontorel_core::run::{
    build_gold_files, evaluate_files, execute_run, gold_manifest_path, load_gold, load_report,
    replay_run, RunConfig, RunError, REPORT_JSON_FILE,
};
use ontorel_core::strategy::{Progress, StrategyKind};
use ontorel_core::thesaurus::GoldOptions;

const SCRIPTED_PROVIDER: &str = "scripted";
const SCRIPTED_MODEL: &str = "scripted-oracle";

#[derive(Parser)]
#[command(
    name = "ontorel",
    version,
    about = "Classify semantic relations between research topics with LLMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a class-balanced gold set from a thesaurus file.
    BuildGold(BuildGoldArgs),
    /// Run one strategy over a gold set.
    Run(Box<RunArgs>),
    /// Score a predictions file against a gold set.
    Evaluate(EvaluateArgs),
    /// Show score differences between two reports (b minus a).
    Diff(DiffArgs),
    /// Rebuild predictions and reports from a run's exchange log.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct BuildGoldArgs {
    /// Thesaurus in BT/NT/USE/UF/RT block format.
    thesaurus: PathBuf,
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Keep `other` pairs clear of indirect hierarchy links too.
    #[arg(long)]
    exclude_transitive: bool,
}

#[derive(Args, Default)]
struct RunArgs {
    /// One of std-1w, std-2w, cot-1w, cot-2w.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Provider id (openai, local, vllm, ..., or scripted for an offline oracle).
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// OpenAI-compatible chat-completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// strict or lenient, optionally with +first-match or +invalid.
    #[arg(long)]
    parse_policy: Option<String>,
    /// Overwrite a run directory holding a different configuration.
    #[arg(long)]
    force: bool,
    /// TOML file with any of the run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Label corruption rate for the scripted provider.
    #[arg(long)]
    noise: Option<f64>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    retries: Option<u32>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    strategy: Option<String>,
    gold: Option<PathBuf>,
    out: Option<PathBuf>,
    provider: Option<String>,
    model: Option<String>,
    endpoint: Option<String>,
    temperature: Option<f64>,
    max_in_flight: Option<usize>,
    parse_policy: Option<String>,
    seed: Option<u64>,
    noise: Option<f64>,
    timeout: Option<f64>,
    retries: Option<u32>,
    max_output_tokens: Option<u32>,
    discussion_max_output_tokens: Option<u32>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiffArgs {
    /// Baseline report.json or run directory.
    a: PathBuf,
    /// Compared report.json or run directory.
    b: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    run_dir: PathBuf,
}

/// Problems with the invocation itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildGold(args) => cmd_build_gold(args),
        Command::Run(args) => cmd_run(*args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Diff(args) => cmd_diff(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_logging() {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) {
        builder.write_style(env_logger::WriteStyle::Never);
    }
    builder.format_timestamp(None).init();
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<RunError>() {
        Some(r) if r.is_input_error() => 2,
        Some(RunError::Backend(BackendError::Credential { .. } | BackendError::Config(_))) => 2,
        _ => 1,
    }
}

fn cmd_build_gold(args: BuildGoldArgs) -> Result<()> {
    let options = GoldOptions {
        per_class: args.per_class,
        seed: args.seed,
        exclude_transitive: args.exclude_transitive,
    };
    let manifest = build_gold_files(&args.thesaurus, options, &args.out)?;
    log::info!(
        "wrote {} pairs to {} (manifest {})",
        manifest.counts.values().sum::<usize>(),
        args.out.display(),
        gold_manifest_path(&args.out).display()
    );
    Ok(())
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Merges flags over the config file over defaults.
fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let strategy_token = args
        .strategy
        .clone()
        .or(file.strategy)
        .ok_or_else(|| usage("--strategy is required"))?;
    let strategy: StrategyKind = strategy_token.parse().map_err(|e| usage(format!("{e}")))?;
    let gold_path = args
        .gold
        .clone()
        .or(file.gold)
        .ok_or_else(|| usage("--gold is required"))?;
    let output_dir = args
        .out
        .clone()
        .or(file.out)
        .ok_or_else(|| usage("--out is required"))?;
    let parse_policy: ParsePolicy = match args.parse_policy.clone().or(file.parse_policy) {
        Some(p) => p
            .parse()
            .map_err(|e| usage(format!("--parse-policy: {e}")))?,
        None => ParsePolicy::default(),
    };

    let defaults = BackendConfig::default();
    let provider_id = args
        .provider
        .clone()
        .or(file.provider)
        .unwrap_or_else(|| defaults.provider_id.clone());
    let scripted = provider_id == SCRIPTED_PROVIDER;
    let model_id = match args.model.clone().or(file.model) {
        Some(m) => m,
        None if scripted => SCRIPTED_MODEL.to_string(),
        None => return Err(usage("--model is required")),
    };
    let endpoint_url = match args.endpoint.clone().or(file.endpoint) {
        Some(e) => e,
        None if scripted || provider_id == defaults.provider_id => defaults.endpoint_url.clone(),
        None => {
            return Err(usage(format!(
                "--endpoint is required for provider `{provider_id}`"
            )))
        }
    };
    let noise = args.noise.or(file.noise);
    if let Some(rate) = noise {
        if !scripted {
            return Err(usage("--noise only applies to the scripted provider"));
        }
        if !(0.0..=1.0).contains(&rate) {
            return Err(usage("--noise must be between 0 and 1"));
        }
    }
    let backend = BackendConfig {
        provider_id,
        model_id,
        endpoint_url,
        temperature: args
            .temperature
            .or(file.temperature)
            .unwrap_or(defaults.temperature),
        max_output_tokens: file.max_output_tokens.unwrap_or(defaults.max_output_tokens),
        discussion_max_output_tokens: file
            .discussion_max_output_tokens
            .unwrap_or(defaults.discussion_max_output_tokens),
        request_timeout: match args.timeout.or(file.timeout) {
            Some(s) if s.is_finite() && s > 0.0 => Duration::from_secs_f64(s),
            Some(_) => return Err(usage("--timeout must be a positive number of seconds")),
            None => defaults.request_timeout,
        },
        max_in_flight: args
            .max_in_flight
            .or(file.max_in_flight)
            .unwrap_or(defaults.max_in_flight),
        retry_limit: args
            .retries
            .or(file.retries)
            .unwrap_or(defaults.retry_limit),
        retry_base_delay: defaults.retry_base_delay,
    };
    backend.validate().map_err(|e| usage(e.to_string()))?;

    Ok(RunConfig {
        strategy,
        backend,
        gold_path,
        output_dir,
        parse_policy,
        seed: args.seed.or(file.seed).unwrap_or(0),
        noise,
    })
}

fn make_provider(config: &RunConfig) -> Result<Arc<dyn Provider>> {
    if config.backend.provider_id == SCRIPTED_PROVIDER {
        let gold = load_gold(&config.gold_path)?;
        let mut backend = ScriptedBackend::perfect(&gold, config.seed);
        if let Some(rate) = config.noise {
            backend = backend.with_noise(rate);
        }
        return Ok(Arc::new(backend));
    }
    let provider = HttpProvider::from_config(&config.backend).map_err(RunError::Backend)?;
    Ok(Arc::new(provider))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = resolve_run_config(&args)?;
    let provider = make_provider(&config)?;
    let interactive = std::io::stderr().is_terminal();
    let progress = move |p: Progress| {
        if interactive {
            eprint!("\r{}/{} pairs, {} invalid", p.done, p.total, p.invalid);
            if p.done == p.total {
                eprintln!();
            }
        } else if p.done == p.total || p.done.is_multiple_of(50) {
            log::info!("{}/{} pairs, {} invalid", p.done, p.total, p.invalid);
        }
        let _ = std::io::stderr().flush();
    };
    let summary = execute_run(&config, provider, args.force, &progress)
        .with_context(|| format!("run in {}", config.output_dir.display()))?;
    log::info!(
        "{} provider calls{}; outputs in {}",
        summary.provider_calls,
        if summary.resumed { " (resumed)" } else { "" },
        summary.run_dir.display()
    );
    println!(
        "macro-F1 {} ({} {})",
        format3(summary.report.macro_f1),
        summary.report.model_id,
        summary.report.strategy
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let report = evaluate_files(&args.predictions, &args.gold, &args.out)?;
    println!(
        "macro-F1 {} ({} {})",
        format3(report.macro_f1),
        report.model_id,
        report.strategy
    );
    Ok(())
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(REPORT_JSON_FILE)
    } else {
        p.to_path_buf()
    }
}

fn cmd_diff(args: DiffArgs) -> Result<()> {
    let a = load_report(&report_path(&args.a))?;
    let b = load_report(&report_path(&args.b))?;
    let diff = diff_reports(&a, &b).map_err(|e| usage(e.to_string()))?;
    print!("{}", diff.to_text());
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let summary = replay_run(&args.run_dir)?;
    for (name, same) in &summary.comparisons {
        log::info!("{name}: {}", if *same { "identical" } else { "DIFFERS" });
    }
    if !summary.identical() {
        let differing = summary
            .comparisons
            .iter()
            .filter(|(_, same)| !same)
            .map(|(n, _)| n.clone())
            .collect();
        return Err(RunError::ReplayMismatch(differing).into());
    }
    println!(
        "macro-F1 {} (replayed, identical)",
        format3(summary.report.macro_f1)
    );
    Ok(())
}
