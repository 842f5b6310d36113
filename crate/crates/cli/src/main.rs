//! `consensus`: run experiments, report results, inspect transcripts and
//! manage the response cache.

mod config;
mod report;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consensus_core::backend::{BackendError, DiskCache};
use consensus_core::dataset::{self, DatasetError, SynthTemplate};
use consensus_core::experiment::{self, ExperimentError};
use consensus_core::features;
use consensus_core::prompts::{self, PromptError, RenderOptions};

#[derive(Parser)]
#[command(
    name = "consensus",
    version,
    about = "Multi-agent LLM sensor fusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; resumes from records already in output_dir.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set protocol.rounds=0`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Accuracy and token tables for every summary under the given paths.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Width of the token bar chart.
        #[arg(long, default_value_t = 40)]
        width: usize,
    },
    /// Full transcript of one window's exchanges.
    Inspect { results: PathBuf, window: String },
    /// Response cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Feature schema manifest as JSON.
    Features {
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        subjects: usize,
        #[arg(long, default_value_t = 4)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON recipe; the built-in activity demo when absent.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Print the built-in recipe and exit.
        #[arg(long, conflicts_with = "template")]
        print_template: bool,
    },
    /// Render the interpretation prompt a window's agent would receive.
    Prompt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        window: String,
        /// Modality id, or `single` for the all-modality prompt.
        #[arg(long, default_value = "single")]
        agent: String,
        /// Request the CONFIDENCE key.
        #[arg(long)]
        confidence: bool,
    },
    /// List template ids, or print one template verbatim.
    Templates { id: Option<String> },
}

#[derive(Subcommand)]
enum CacheAction {
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    Purge {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn record(&self) -> serde_json::Value {
        serde_json::json!({"error": {"kind": self.kind, "message": self.message}})
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::new("dataset", e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        Self::new("backend", e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        Self::new("prompt", e.to_string())
    }
}

fn json_pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn run(config_path: &Path, overrides: &[String]) -> Result<String, CliError> {
    let config = config::load(config_path, overrides)?;
    let outcome = experiment::run_experiment(&config).map_err(|e| {
        let err = CliError::from(e);
        if std::fs::create_dir_all(&config.output_dir).is_ok() {
            let _ = std::fs::write(
                config.output_dir.join("error.json"),
                json_pretty(&err.record()) + "\n",
            );
        }
        err
    })?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    eprintln!(
        "executed {} windows, resumed {}, results in {}",
        outcome.executed,
        outcome.resumed,
        config.output_dir.display()
    );
    Ok(consensus_core::eval::render_table(std::slice::from_ref(
        &outcome.summary,
    )))
}

fn synth(
    out: &Path,
    subjects: usize,
    per_class: usize,
    seed: u64,
    template: Option<&Path>,
) -> Result<String, CliError> {
    let recipe = match template {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SynthTemplate::demo(),
    };
    let data = dataset::generate_synthetic(&recipe, subjects, per_class, seed);
    dataset::write_dataset(out, &data.task, &data.windows, Some(&data.manifest))?;
    eprintln!("wrote {} windows to {}", data.windows.len(), out.display());
    Ok(String::new())
}

fn prompt(
    config_path: &Path,
    overrides: &[String],
    window_id: &str,
    agent: &str,
    confidence: bool,
) -> Result<String, CliError> {
    let config = config::load(config_path, overrides)?;
    let (task, windows) = dataset::load_dataset(&config.dataset_root)?;
    let prepared = experiment::prepare(&task, &windows, &config)?;
    let window = prepared
        .selected
        .iter()
        .find(|w| w.window_id == window_id)
        .ok_or_else(|| {
            CliError::config(format!("window `{window_id}` is not in the test selection"))
        })?;
    let feats = prepared.window_features(&task, window)?;
    let examples = prepared.examples_for(&window.subject_id).ok_or_else(|| {
        CliError::config(format!("no examples for subject `{}`", window.subject_id))
    })?;
    let opts = RenderOptions { confidence };
    let pair = if agent == "single" {
        prompts::render_single_agent(&task, &feats, examples, opts)?
    } else {
        let fv = feats
            .get(agent)
            .ok_or_else(|| CliError::config(format!("unknown agent `{agent}`")))?;
        prompts::render_modality_agent(&task, agent, fv, examples, opts)?
    };
    Ok(format!(
        "=== {} SYSTEM ===\n{}\n=== {} USER ===\n{}\n",
        pair.template_id, pair.system, pair.template_id, pair.user
    ))
}

/// Runs one subcommand and returns what it prints on stdout.
fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Run { config, overrides } => run(&config, &overrides),
        Command::Report { paths, width } => {
            let (text, warnings) = report::report(&paths, width)?;
            for w in warnings {
                log::warn!("{w}");
            }
            Ok(text)
        }
        Command::Inspect { results, window } => report::inspect(&results, &window),
        Command::Cache { action } => {
            let v = match action {
                CacheAction::Stats { dir } => {
                    let s = DiskCache::new(&dir).stats()?;
                    serde_json::json!({"entries": s.entries, "bytes": s.bytes})
                }
                CacheAction::Purge { dir } => {
                    serde_json::json!({"removed": DiskCache::new(&dir).purge()?})
                }
            };
            Ok(format!("{v}\n"))
        }
        Command::Features { out } => {
            let manifest = serde_json::json!({
                "design": features::design_parameters(),
                "features": features::feature_schema(),
            });
            let text = json_pretty(&manifest) + "\n";
            match out {
                Some(p) => std::fs::write(&p, text)
                    .map(|()| String::new())
                    .map_err(|e| CliError::io(&p, e)),
                None => Ok(text),
            }
        }
        Command::Synth {
            out,
            subjects,
            per_class,
            seed,
            template,
            print_template,
        } => {
            if print_template {
                return Ok(json_pretty(&SynthTemplate::demo()) + "\n");
            }
            synth(&out, subjects, per_class, seed, template.as_deref())
        }
        Command::Prompt {
            config,
            overrides,
            window,
            agent,
            confidence,
        } => prompt(&config, &overrides, &window, &agent, confidence),
        Command::Templates { id } => {
            let texts = prompts::template_texts();
            match id {
                Some(id) => {
                    let text = texts
                        .get(id.as_str())
                        .ok_or_else(|| CliError::config(format!("unknown template `{id}`")))?;
                    Ok(format!("{text}\n"))
                }
                None => Ok(texts.keys().map(|k| format!("{k}\n")).collect()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => match std::io::stdout().write_all(text.as_bytes()) {
            // A reader that stops early (`| head`) is not a failure.
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                eprintln!("{}", CliError::new("io", e.to_string()).record());
                ExitCode::FAILURE
            }
            _ => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
