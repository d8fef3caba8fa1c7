//! Run directories: executing a strategy over a gold set, evaluating, and
//! replaying a finished run from its exchange log.
//!
//! A run directory holds:
//!
//! ```text
//! manifest.json     configuration snapshot and input checksums
//! gold.csv          the gold set the run was scored against
//! exchanges.jsonl   every prompt/response pair, append-only
//! predictions.csv   one row per finished pair
//! report.csv        per-class scores plus the macro row
//! report.txt        the same as an aligned table
//! report.json       full report, read back by `diff`
//! confusion.csv     gold-by-predicted counts
//! ```
//!
//! Final artifacts are written to a temporary file and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendError, Client, Completer, ExchangeStore, Provider};
use crate::label::RelationLabel;
use crate::metrics::{score, EvalReport, MetricsError, ReportMeta};
use crate::parser::ParsePolicy;
use crate::prompt::builtin_checksums;
use crate::strategy::{
    predictions_to_csv_bytes, read_predictions, PairPrediction, Progress, Runner, StrategyError,
    StrategyKind, StrategySettings,
};
use crate::thesaurus::{
    build_gold, extract_relations, parse_thesaurus, GoldDataset, GoldError, GoldOptions,
    ThesaurusError,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GOLD_FILE: &str = "gold.csv";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const REPLAY_DIR: &str = "replay";

/// Files that `replay` regenerates and compares.
pub const DERIVED_FILES: [&str; 5] = [
    PREDICTIONS_FILE,
    REPORT_CSV_FILE,
    REPORT_TEXT_FILE,
    REPORT_JSON_FILE,
    CONFUSION_FILE,
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gold(#[from] GoldError),
    #[error("run stopped after {completed} of {total} pairs (partial predictions kept): {source}")]
    Partial {
        completed: usize,
        total: usize,
        #[source]
        source: StrategyError,
    },
    #[error("replay differs from the original run in: {}", .0.join(", "))]
    ReplayMismatch(Vec<String>),
}

impl RunError {
    /// Bad arguments or unreadable inputs, as opposed to failures while
    /// running.
    pub fn is_input_error(&self) -> bool {
        matches!(self, RunError::Input { .. } | RunError::Usage(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, RunError> {
    fs::read(path).map_err(|e| RunError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| RunError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn load_gold(path: &Path) -> Result<GoldDataset, RunError> {
    let bytes = read_input(path)?;
    GoldDataset::read_csv(bytes.as_slice()).map_err(|e| RunError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------- build-gold

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldManifest {
    pub thesaurus_checksum: String,
    pub dataset_checksum: String,
    pub seed: u64,
    pub per_class: usize,
    pub exclude_transitive: bool,
    pub counts: BTreeMap<RelationLabel, usize>,
    pub parse_warnings: usize,
    pub reciprocity_issues: usize,
}

/// Sidecar manifest path: `gold.csv` becomes `gold.manifest.json`.
pub fn gold_manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Parses a thesaurus file, samples a gold set, and writes the CSV plus its
/// manifest.
pub fn build_gold_files(
    thesaurus_path: &Path,
    options: GoldOptions,
    out: &Path,
) -> Result<GoldManifest, RunError> {
    let bytes = read_input(thesaurus_path)?;
    let thesaurus =
        parse_thesaurus(bytes.as_slice()).map_err(|e: ThesaurusError| RunError::Input {
            path: thesaurus_path.to_path_buf(),
            message: e.to_string(),
        })?;
    for w in &thesaurus.warnings {
        log::warn!("{}: {w:?}", thesaurus_path.display());
    }
    let extraction = extract_relations(&thesaurus);
    for issue in &extraction.reciprocity_issues {
        log::debug!("{}: {issue:?}", thesaurus_path.display());
    }
    let gold = build_gold(&extraction.triples, &thesaurus.all_terms(), options)?;

    let csv = gold.to_csv_bytes();
    let mut counts = BTreeMap::new();
    for label in RelationLabel::ALL {
        counts.insert(
            label,
            gold.records().iter().filter(|r| r.label == label).count(),
        );
    }
    let manifest = GoldManifest {
        thesaurus_checksum: sha256_hex(&bytes),
        dataset_checksum: sha256_hex(&csv),
        seed: options.seed,
        per_class: options.per_class,
        exclude_transitive: options.exclude_transitive,
        counts,
        parse_warnings: thesaurus.warnings.len(),
        reciprocity_issues: extraction.reciprocity_issues.len(),
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_atomic(out, &csv)?;
    write_atomic(&gold_manifest_path(out), &to_json_bytes(&manifest))?;
    Ok(manifest)
}

// ----------------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub backend: BackendConfig,
    pub gold_path: PathBuf,
    pub output_dir: PathBuf,
    pub parse_policy: ParsePolicy,
    pub seed: u64,
    /// Label corruption rate for the scripted provider.
    pub noise: Option<f64>,
}

/// What a run directory records about the run that produced it. Contains no
/// credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub strategy: StrategyKind,
    pub backend: BackendConfig,
    pub parse_policy: ParsePolicy,
    pub seed: u64,
    pub noise: Option<f64>,
    pub gold_source: String,
    pub dataset_checksum: String,
    pub template_checksums: BTreeMap<String, String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(config: &RunConfig, gold: &GoldDataset) -> Self {
        RunManifest {
            strategy: config.strategy,
            backend: config.backend.clone(),
            parse_policy: config.parse_policy,
            seed: config.seed,
            noise: config.noise,
            gold_source: config.gold_path.display().to_string(),
            dataset_checksum: gold.checksum(),
            template_checksums: builtin_checksums().into_iter().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Whether a run with `other` can continue where this one left off.
    /// Settings that do not change any exchange or prediction may differ.
    fn compatible_with(&self, other: &RunManifest) -> bool {
        let strip = |b: &BackendConfig| BackendConfig {
            max_in_flight: 1,
            request_timeout: Default::default(),
            retry_limit: 0,
            retry_base_delay: Default::default(),
            ..b.clone()
        };
        self.strategy == other.strategy
            && strip(&self.backend) == strip(&other.backend)
            && self.parse_policy == other.parse_policy
            && self.seed == other.seed
            && self.noise == other.noise
            && self.dataset_checksum == other.dataset_checksum
            && self.template_checksums == other.template_checksums
    }

    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let path = run_dir.join(MANIFEST_FILE);
        let bytes = read_input(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| RunError::Input {
            path,
            message: format!("not a run manifest: {e}"),
        })
    }

    pub fn report_meta(&self) -> ReportMeta {
        ReportMeta {
            model_id: self.backend.model_id.clone(),
            strategy: self.strategy,
            parse_policy: self.parse_policy.to_string(),
        }
    }

    pub fn strategy_settings(&self) -> StrategySettings {
        StrategySettings {
            policy: self.parse_policy,
            answer_tokens: self.backend.max_output_tokens,
            discussion_tokens: self.backend.discussion_max_output_tokens,
        }
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("plain data serializes");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: EvalReport,
    pub provider_calls: u64,
    pub resumed: bool,
    pub run_dir: PathBuf,
}

/// Prepares the run directory: resumes a compatible run, refuses an
/// incompatible one unless `force`, in which case earlier outputs are removed.
/// Returns whether an earlier run is being resumed.
fn prepare_run_dir(
    config: &RunConfig,
    manifest: &RunManifest,
    force: bool,
) -> Result<bool, RunError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut resumed = false;
    if manifest_path.exists() {
        let previous = RunManifest::load(dir);
        match previous {
            Ok(prev) if prev.compatible_with(manifest) => resumed = true,
            _ if force => {
                for name in [EXCHANGES_FILE, GOLD_FILE].iter().chain(DERIVED_FILES.iter()) {
                    let path = dir.join(name);
                    if path.exists() {
                        fs::remove_file(&path).map_err(io_err(&path))?;
                    }
                }
                let replay = dir.join(REPLAY_DIR);
                if replay.exists() {
                    fs::remove_dir_all(&replay).map_err(io_err(&replay))?;
                }
            }
            _ => {
                return Err(RunError::Usage(format!(
                    "{} already holds a run with a different configuration; pass --force to overwrite it",
                    dir.display()
                )))
            }
        }
    }
    write_atomic(&manifest_path, &to_json_bytes(manifest))?;
    Ok(resumed)
}

/// Runs `config.strategy` over every gold pair with `provider`, caching in
/// the run directory's exchange log, then scores the result.
pub fn execute_run(
    config: &RunConfig,
    provider: Arc<dyn Provider>,
    force: bool,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<RunSummary, RunError> {
    let gold = load_gold(&config.gold_path)?;
    let manifest = RunManifest::new(config, &gold);
    let resumed = prepare_run_dir(config, &manifest, force)?;
    let dir = &config.output_dir;
    write_atomic(&dir.join(GOLD_FILE), &gold.to_csv_bytes())?;

    let store = Arc::new(ExchangeStore::open(dir.join(EXCHANGES_FILE))?);
    if resumed {
        log::info!("resuming: {} exchanges already logged", store.len());
    }
    let client = Client::new(config.backend.clone(), provider)?.with_store(store);
    let predictions = run_and_write(
        &client,
        &manifest,
        &gold,
        dir,
        config.backend.max_in_flight,
        progress,
    )?;
    let report = score(&predictions, &gold, manifest.report_meta())?;
    write_reports(dir, &report)?;
    Ok(RunSummary {
        report,
        provider_calls: client.provider_calls(),
        resumed,
        run_dir: dir.clone(),
    })
}

fn run_and_write(
    completer: &dyn Completer,
    manifest: &RunManifest,
    gold: &GoldDataset,
    dir: &Path,
    workers: usize,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<Vec<PairPrediction>, RunError> {
    let runner = Runner::new(completer, manifest.strategy_settings());
    let pairs: Vec<_> = gold.records().iter().map(|r| r.pair.clone()).collect();
    let outcome = runner.run_batch(&pairs, manifest.strategy, workers, progress);
    write_atomic(
        &dir.join(PREDICTIONS_FILE),
        &predictions_to_csv_bytes(&outcome.predictions, gold),
    )?;
    match outcome.errors.into_iter().next() {
        None => Ok(outcome.predictions),
        Some(source) => Err(RunError::Partial {
            completed: outcome.predictions.len(),
            total: pairs.len(),
            source,
        }),
    }
}

pub fn write_reports(dir: &Path, report: &EvalReport) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let mut confusion = Vec::new();
    report.matrix.write_csv(&mut confusion)?;
    write_atomic(&dir.join(REPORT_CSV_FILE), &csv)?;
    write_atomic(&dir.join(REPORT_TEXT_FILE), report.to_text().as_bytes())?;
    write_atomic(&dir.join(REPORT_JSON_FILE), report.to_json().as_bytes())?;
    write_atomic(&dir.join(CONFUSION_FILE), &confusion)?;
    Ok(())
}

// ------------------------------------------------------------------ evaluate

/// Scores a predictions file against a gold file and writes the report
/// files to `out_dir`. Model and parse policy come from a run manifest next
/// to the predictions file when there is one.
pub fn evaluate_files(
    predictions_path: &Path,
    gold_path: &Path,
    out_dir: &Path,
) -> Result<EvalReport, RunError> {
    let gold = load_gold(gold_path)?;
    let bytes = read_input(predictions_path)?;
    let predictions = read_predictions(bytes.as_slice()).map_err(|e| RunError::Input {
        path: predictions_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let manifest = predictions_path
        .parent()
        .filter(|d| d.join(MANIFEST_FILE).exists())
        .and_then(|d| RunManifest::load(d).ok());
    let strategy = match (predictions.first(), &manifest) {
        (Some(p), _) => p.strategy,
        (None, Some(m)) => m.strategy,
        (None, None) => {
            return Err(RunError::Input {
                path: predictions_path.to_path_buf(),
                message: "no predictions and no run manifest to take the strategy from".into(),
            })
        }
    };
    let meta = match &manifest {
        Some(m) if m.strategy == strategy => m.report_meta(),
        _ => ReportMeta {
            model_id: "unknown".into(),
            strategy,
            parse_policy: "unknown".into(),
        },
    };
    let report = score(&predictions, &gold, meta)?;
    write_reports(out_dir, &report)?;
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<EvalReport, RunError> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| RunError::Input {
        path: path.to_path_buf(),
        message: format!("not a report: {e}"),
    })
}

// -------------------------------------------------------------------- replay

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub report: EvalReport,
    /// `(file name, identical to the original)` for each derived file.
    pub comparisons: Vec<(String, bool)>,
}

impl ReplaySummary {
    pub fn identical(&self) -> bool {
        self.comparisons.iter().all(|(_, same)| *same)
    }
}

/// Re-derives predictions and reports from the exchange log alone, writes
/// them under `run_dir/replay/`, and compares them with the originals.
pub fn replay_run(run_dir: &Path) -> Result<ReplaySummary, RunError> {
    let manifest = RunManifest::load(run_dir)?;
    let gold = load_gold(&run_dir.join(GOLD_FILE))?;
    if gold.checksum() != manifest.dataset_checksum {
        return Err(RunError::Input {
            path: run_dir.join(GOLD_FILE),
            message: "does not match the dataset checksum in the manifest".into(),
        });
    }
    let log_path = run_dir.join(EXCHANGES_FILE);
    if !log_path.exists() {
        return Err(RunError::Input {
            path: log_path,
            message: "exchange log not found".into(),
        });
    }
    let store = Arc::new(ExchangeStore::open_read_only(&log_path)?);
    let client = Client::offline(manifest.backend.clone(), store)?;
    let out = run_dir.join(REPLAY_DIR);
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let predictions = run_and_write(
        &client,
        &manifest,
        &gold,
        &out,
        manifest.backend.max_in_flight,
        &|_| {},
    )?;
    let report = score(&predictions, &gold, manifest.report_meta())?;
    write_reports(&out, &report)?;

    let mut comparisons = Vec::new();
    for name in DERIVED_FILES {
        let original = fs::read(run_dir.join(name)).ok();
        let replayed = fs::read(out.join(name)).map_err(io_err(&out.join(name)))?;
        comparisons.push((
            name.to_string(),
            original.as_deref() == Some(replayed.as_slice()),
        ));
    }
    Ok(ReplaySummary {
        report,
        comparisons,
    })
}
