//! Experiment configuration and the window pipeline: split, subsample, mask,
//! extract features, run the protocol, write records and a summary.
//!
//! Output directory layout:
//!
//! - `records.jsonl`: one [`RunRecord`] per window, sorted by window id
//! - `summary.json`: the [`RunSummary`]
//! - `summary.txt`: the same as a plain-text table
//!
//! Runs resume: records whose config hash matches are kept and their windows
//! skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, CachedBackend, ChatBackend, DiskCache, ScriptedBackend};
use crate::dataset::{self, DatasetError, MaskPlan, Split};
use crate::eval::{self, EvalError, RunSummary};
use crate::features::{self, FeatureError};
use crate::model::{
    AgentResponse, ClassExamples, FusionResult, Prediction, SensorWindow, TaskSpec, WindowFeatures,
};
use crate::protocols::{
    self, ExchangeLog, ProtocolConfig, ProtocolError, ProtocolName, WindowContext,
};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_TABLE_FILE: &str = "summary.txt";
/// Environment variable consulted when the config has no endpoint.
pub const ENDPOINT_ENV: &str = "CONSENSUS_ENDPOINT";
pub const DEFAULT_CREDENTIAL_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("window `{window}`: {source}")]
    Feature {
        window: String,
        #[source]
        source: FeatureError,
    },
    #[error("window `{window}`: {source}")]
    Protocol {
        window: String,
        #[source]
        source: ProtocolError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl ExperimentError {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::Dataset(_) => "dataset",
            ExperimentError::Feature { .. } => "features",
            ExperimentError::Protocol { .. } => "protocol",
            ExperimentError::Backend(_) => "backend",
            ExperimentError::Eval(_) => "eval",
            ExperimentError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub split: u64,
    #[serde(default)]
    pub subsample: u64,
    #[serde(default)]
    pub mask: u64,
    #[serde(default)]
    pub bootstrap: u64,
}

fn default_max_in_flight() -> usize {
    4
}
fn default_retry_base_ms() -> u64 {
    1000
}
fn default_timeout_s() -> u64 {
    300
}
fn default_scripted_model() -> String {
    "scripted".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Live {
        /// Falls back to the `CONSENSUS_ENDPOINT` environment variable.
        #[serde(default)]
        endpoint: Option<String>,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        credential_env: Option<String>,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_retry_base_ms")]
        retry_base_ms: u64,
        #[serde(default = "default_timeout_s")]
        timeout_s: u64,
    },
    Scripted {
        script: PathBuf,
        #[serde(default = "default_scripted_model")]
        model: String,
    },
}

impl BackendConfig {
    pub fn model(&self) -> &str {
        match self {
            BackendConfig::Live { model, .. } | BackendConfig::Scripted { model, .. } => model,
        }
    }
}

fn default_bootstrap_iterations() -> usize {
    eval::DEFAULT_BOOTSTRAP_ITERATIONS
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_root: PathBuf,
    pub protocol: ProtocolConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub missing_ratio: f64,
    /// Test windows kept per class; all when absent.
    #[serde(default)]
    pub per_class: Option<usize>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_bootstrap_iterations")]
    pub bootstrap_iterations: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    /// SHA-256 over the canonical JSON of every field that can change a
    /// result. Output location, cache location and worker count are left out
    /// so a run can move or change parallelism and still resume.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        for k in ["output_dir", "cache_dir", "workers"] {
            obj.remove(k);
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        self.protocol
            .check()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.missing_ratio) {
            return Err(ExperimentError::Config(format!(
                "missing_ratio {} outside [0, 1]",
                self.missing_ratio
            )));
        }
        if self.per_class == Some(0) {
            return Err(ExperimentError::Config("per_class must be positive".into()));
        }
        Ok(())
    }

    /// Backend described by the config, behind the disk cache when one is
    /// configured.
    pub fn build_backend(&self) -> Result<Box<dyn ChatBackend>, ExperimentError> {
        let inner: Box<dyn ChatBackend> = match &self.backend {
            BackendConfig::Scripted { script, .. } => Box::new(ScriptedBackend::load(script)?),
            BackendConfig::Live {
                endpoint,
                credential_env,
                max_in_flight,
                retry_base_ms,
                timeout_s,
                ..
            } => live_backend(
                endpoint,
                credential_env,
                *max_in_flight,
                *retry_base_ms,
                *timeout_s,
            )?,
        };
        Ok(match &self.cache_dir {
            Some(dir) => Box::new(CachedBackend::new(inner, DiskCache::new(dir))),
            None => inner,
        })
    }
}

#[cfg(feature = "live")]
fn live_backend(
    endpoint: &Option<String>,
    credential_env: &Option<String>,
    max_in_flight: usize,
    retry_base_ms: u64,
    timeout_s: u64,
) -> Result<Box<dyn ChatBackend>, ExperimentError> {
    use crate::backend::{LiveConfig, OpenAiBackend};
    use std::time::Duration;

    let endpoint = endpoint
        .clone()
        .or_else(|| std::env::var(ENDPOINT_ENV).ok())
        .ok_or_else(|| {
            ExperimentError::Config(format!(
                "no endpoint configured and {ENDPOINT_ENV} is unset"
            ))
        })?;
    let var = credential_env.as_deref().unwrap_or(DEFAULT_CREDENTIAL_ENV);
    let mut cfg = LiveConfig::new(endpoint);
    cfg.api_key = std::env::var(var).ok();
    cfg.max_in_flight = max_in_flight;
    cfg.retry_base = Duration::from_millis(retry_base_ms);
    cfg.timeout = Duration::from_secs(timeout_s);
    Ok(Box::new(OpenAiBackend::new(cfg)?))
}

#[cfg(not(feature = "live"))]
fn live_backend(
    _: &Option<String>,
    _: &Option<String>,
    _: usize,
    _: u64,
    _: u64,
) -> Result<Box<dyn ChatBackend>, ExperimentError> {
    Err(ExperimentError::Config(
        "built without live backend support".into(),
    ))
}

/// Result of running one protocol on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub window_id: String,
    pub subject_id: String,
    pub label: String,
    pub protocol: ProtocolName,
    pub prediction: Prediction,
    pub valid: bool,
    pub per_modality: Vec<AgentResponse>,
    #[serde(default)]
    pub vote_anchor: Option<String>,
    #[serde(default)]
    pub fusion: Option<FusionResult>,
    pub exchanges: Vec<ExchangeLog>,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Class → example window id shown to the agents.
    pub examples: BTreeMap<String, String>,
    pub seed: u64,
    pub config_hash: String,
    pub missing_ratio: f64,
    pub masked_modalities: Vec<String>,
}

/// Everything fixed before any backend call.
pub struct Prepared<'w> {
    pub split: Split,
    pub selected: Vec<&'w SensorWindow>,
    pub plan: MaskPlan,
    examples: BTreeMap<String, (ClassExamples, BTreeMap<String, String>)>,
}

impl Prepared<'_> {
    /// Example features shown to a subject's agents.
    pub fn examples_for(&self, subject: &str) -> Option<&ClassExamples> {
        self.examples.get(subject).map(|(f, _)| f)
    }

    /// Features of `window` after its planned masking, as agents see them.
    pub fn window_features(
        &self,
        task: &TaskSpec,
        window: &SensorWindow,
    ) -> Result<WindowFeatures, ExperimentError> {
        let masked = dataset::apply_mask_plan(window, &self.plan)?;
        features::extract_window(&masked, task).map_err(|source| ExperimentError::Feature {
            window: window.window_id.clone(),
            source,
        })
    }
}

pub fn prepare<'w>(
    task: &TaskSpec,
    windows: &'w [SensorWindow],
    config: &ExperimentConfig,
) -> Result<Prepared<'w>, ExperimentError> {
    let split = dataset::within_subject_split(task, windows, config.seeds.split);
    let by_id: BTreeMap<&str, &SensorWindow> =
        windows.iter().map(|w| (w.window_id.as_str(), w)).collect();
    let tests: Vec<&SensorWindow> = split
        .test_windows
        .iter()
        .map(|id| by_id[id.as_str()])
        .collect();
    let selected = match config.per_class {
        Some(k) => dataset::subsample_balanced(&tests, k, config.seeds.subsample)
            .iter()
            .map(|id| by_id[id.as_str()])
            .collect(),
        None => tests,
    };
    let plan = MaskPlan::build(&selected, config.missing_ratio, config.seeds.mask);
    let subjects: BTreeSet<&str> = selected.iter().map(|w| w.subject_id.as_str()).collect();
    let mut examples = BTreeMap::new();
    for subject in subjects {
        let mut feats = ClassExamples::new();
        let mut ids = BTreeMap::new();
        for (class, w) in split.examples_for(subject, windows) {
            let f =
                features::extract_window(w, task).map_err(|source| ExperimentError::Feature {
                    window: w.window_id.clone(),
                    source,
                })?;
            feats.insert(class.clone(), f);
            ids.insert(class, w.window_id.clone());
        }
        examples.insert(subject.to_string(), (feats, ids));
    }
    Ok(Prepared {
        split,
        selected,
        plan,
        examples,
    })
}

pub fn run_window(
    task: &TaskSpec,
    prepared: &Prepared<'_>,
    window: &SensorWindow,
    config: &ExperimentConfig,
    config_hash: &str,
    backend: &dyn ChatBackend,
) -> Result<RunRecord, ExperimentError> {
    let feats = prepared.window_features(task, window)?;
    let (examples, example_ids) = &prepared.examples[&window.subject_id];
    let ctx = WindowContext {
        task,
        features: &feats,
        examples,
        backend,
        model: config.backend.model(),
    };
    let run = protocols::run_protocol(ctx, &config.protocol).map_err(|source| {
        ExperimentError::Protocol {
            window: window.window_id.clone(),
            source,
        }
    })?;
    Ok(RunRecord {
        window_id: window.window_id.clone(),
        subject_id: window.subject_id.clone(),
        label: window.label.clone(),
        protocol: config.protocol.name,
        prediction: run.prediction,
        valid: run.valid,
        per_modality: run.per_modality,
        vote_anchor: run.vote_anchor,
        fusion: run.fusion,
        exchanges: run.exchanges,
        flags: run.flags,
        examples: example_ids.clone(),
        seed: config.protocol.seed,
        config_hash: config_hash.to_string(),
        missing_ratio: config.missing_ratio,
        masked_modalities: prepared
            .plan
            .masked(&window.window_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default(),
    })
}

/// Runs `windows` on `workers` threads, handing each record to `sink` on
/// the calling thread as it completes. Stops at the first error.
fn run_parallel(
    task: &TaskSpec,
    prepared: &Prepared<'_>,
    windows: &[&SensorWindow],
    config: &ExperimentConfig,
    config_hash: &str,
    backend: &dyn ChatBackend,
    mut sink: impl FnMut(RunRecord) -> Result<(), ExperimentError>,
) -> Result<(), ExperimentError> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = config.workers.clamp(1, windows.len().max(1));
    let (tx, rx) = mpsc::channel::<Result<RunRecord, ExperimentError>>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(w) = windows.get(i) else { break };
                    let r = run_window(task, prepared, w, config, config_hash, backend);
                    if r.is_err() {
                        stop.store(true, Ordering::SeqCst);
                    }
                    if tx.send(r).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut first_err = None;
        for r in rx {
            match r.and_then(&mut sink) {
                Ok(()) => {}
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    })
}

/// Runs every selected window without touching the filesystem.
pub fn run_in_memory(
    task: &TaskSpec,
    windows: &[SensorWindow],
    config: &ExperimentConfig,
    backend: &dyn ChatBackend,
) -> Result<Vec<RunRecord>, ExperimentError> {
    config.check()?;
    let hash = config.config_hash();
    let prepared = prepare(task, windows, config)?;
    let mut out = Vec::new();
    run_parallel(
        task,
        &prepared,
        &prepared.selected,
        config,
        &hash,
        backend,
        |r| {
            out.push(r);
            Ok(())
        },
    )?;
    out.sort_by(|a, b| a.window_id.cmp(&b.window_id));
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            // A torn final line from an interrupted run is dropped.
            Err(e) => log::warn!(
                "{}:{}: skipping unreadable record: {e}",
                path.display(),
                i + 1
            ),
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub executed: usize,
    pub resumed: usize,
    pub warnings: Vec<String>,
}

/// Full run against the configured backend.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    config.check()?;
    let backend = config.build_backend()?;
    run_experiment_with(config, backend.as_ref())
}

/// Full run with an explicit backend: loads the dataset, resumes from any
/// matching records in the output directory, and writes records and summary.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    backend: &dyn ChatBackend,
) -> Result<RunOutcome, ExperimentError> {
    config.check()?;
    let hash = config.config_hash();
    let (task, windows) = dataset::load_dataset(&config.dataset_root)?;
    let prepared = prepare(&task, &windows, config)?;
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let records_path = out_dir.join(RECORDS_FILE);

    let existing = read_records(&records_path)?;
    if let Some(other) = existing.iter().find(|r| r.config_hash != hash) {
        return Err(ExperimentError::Config(format!(
            "{} holds records for config {} (this config is {hash}); use another output_dir",
            records_path.display(),
            other.config_hash
        )));
    }
    let wanted: BTreeSet<&str> = prepared
        .selected
        .iter()
        .map(|w| w.window_id.as_str())
        .collect();
    let mut records: BTreeMap<String, RunRecord> = existing
        .into_iter()
        .filter(|r| wanted.contains(r.window_id.as_str()))
        .map(|r| (r.window_id.clone(), r))
        .collect();
    let resumed = records.len();
    let todo: Vec<&SensorWindow> = prepared
        .selected
        .iter()
        .copied()
        .filter(|w| !records.contains_key(&w.window_id))
        .collect();

    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(io_err(&records_path))?;
    // Start on a fresh line after a torn tail.
    let torn = fs::read(&records_path)
        .map_err(io_err(&records_path))?
        .last()
        .is_some_and(|b| *b != b'\n');
    if torn {
        writeln!(log_file).map_err(io_err(&records_path))?;
    }
    let mut executed = 0;
    run_parallel(&task, &prepared, &todo, config, &hash, backend, |r| {
        let line = serde_json::to_string(&r).expect("record serializes");
        writeln!(log_file, "{line}").map_err(io_err(&records_path))?;
        executed += 1;
        records.insert(r.window_id.clone(), r);
        Ok(())
    })?;
    drop(log_file);

    let records: Vec<RunRecord> = records.into_values().collect();
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    write_atomic(&records_path, body.as_bytes())?;
    let summary = eval::summarize(&records, config, &hash)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&out_dir.join(SUMMARY_FILE), format!("{json}\n").as_bytes())?;
    let table = format!(
        "config {hash}\n{}\n{}",
        eval::render_table(std::slice::from_ref(&summary)),
        eval::render_token_bars(std::slice::from_ref(&summary), 40)
    );
    write_atomic(&out_dir.join(SUMMARY_TABLE_FILE), table.as_bytes())?;
    Ok(RunOutcome {
        summary,
        executed,
        resumed,
        warnings: prepared.split.warnings.clone(),
    })
}
