//! Accuracy, bootstrap spread, token accounting, report tables and the
//! missingness sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatBackend;
use crate::experiment::{self, ExperimentConfig, ExperimentError, RunRecord};
use crate::model::{normalize_label, Phase, SensorWindow, TaskSpec};
use crate::protocols::ProtocolConfig;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 1000;
pub const DEFAULT_SWEEP_RATIOS: [f64; 4] = [0.0, 0.1, 0.3, 0.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub n: usize,
    /// Runs without a valid final answer; counted as incorrect.
    pub invalid: usize,
    pub value: f64,
}

/// Whether a record's final prediction matches its label after trimming and
/// case-folding. Invalid runs are never correct.
pub fn is_correct(record: &RunRecord) -> bool {
    record.valid
        && record
            .prediction
            .label()
            .is_some_and(|p| normalize_label(p) == normalize_label(&record.label))
}

pub fn accuracy(records: &[RunRecord]) -> Result<Accuracy, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = records.iter().filter(|r| is_correct(r)).count();
    let invalid = records.iter().filter(|r| !r.valid).count();
    Ok(Accuracy {
        correct,
        n: records.len(),
        invalid,
        value: correct as f64 / records.len() as f64,
    })
}

/// Standard deviation of accuracy over `iterations` with-replacement
/// resamples of the same size.
pub fn bootstrap_std(correct: &[bool], iterations: usize, seed: u64) -> f64 {
    let n = correct.len();
    if n == 0 || iterations == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accs: Vec<f64> = (0..iterations)
        .map(|_| (0..n).filter(|_| correct[rng.random_range(0..n)]).count() as f64 / n as f64)
        .collect();
    let mean = accs.iter().sum::<f64>() / iterations as f64;
    (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / iterations as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenTotals {
    pub interpretation_prompt: u64,
    pub interpretation_completion: u64,
    pub aggregation_prompt: u64,
    pub aggregation_completion: u64,
    pub interpretation_calls: u64,
    pub aggregation_calls: u64,
}

/// Per-inference (per-window) token means split by phase. The headline
/// metric is prompt tokens; completions are reported alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    pub inferences: usize,
    pub interpretation_prompt: f64,
    pub interpretation_completion: f64,
    pub aggregation_prompt: f64,
    pub aggregation_completion: f64,
    pub totals: TokenTotals,
    /// Some counts are estimates rather than provider-reported.
    pub approximate: bool,
}

pub fn token_report(records: &[RunRecord]) -> TokenReport {
    let mut t = TokenTotals::default();
    let mut approximate = false;
    for e in records.iter().flat_map(|r| &r.exchanges) {
        approximate |= e.usage.approximate;
        match e.phase {
            Phase::Interpretation => {
                t.interpretation_prompt += e.usage.prompt_tokens;
                t.interpretation_completion += e.usage.completion_tokens;
                t.interpretation_calls += 1;
            }
            Phase::Aggregation => {
                t.aggregation_prompt += e.usage.prompt_tokens;
                t.aggregation_completion += e.usage.completion_tokens;
                t.aggregation_calls += 1;
            }
        }
    }
    let n = records.len().max(1) as f64;
    TokenReport {
        inferences: records.len(),
        interpretation_prompt: t.interpretation_prompt as f64 / n,
        interpretation_completion: t.interpretation_completion as f64 / n,
        aggregation_prompt: t.aggregation_prompt as f64 / n,
        aggregation_completion: t.aggregation_completion as f64 / n,
        totals: t,
        approximate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub protocol: String,
    pub n: usize,
    pub correct: usize,
    pub invalid: usize,
    pub accuracy: f64,
    pub bootstrap_std: f64,
    #[serde(default)]
    pub token_report: Option<TokenReport>,
    pub missing_ratio: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Diagnostic flag name → number of records raising it.
    #[serde(default)]
    pub flags: BTreeMap<String, usize>,
}

pub fn summarize(
    records: &[RunRecord],
    config: &ExperimentConfig,
    config_hash: &str,
) -> Result<RunSummary, EvalError> {
    let acc = accuracy(records)?;
    let correct: Vec<bool> = records.iter().map(is_correct).collect();
    let mut flags = BTreeMap::new();
    for r in records {
        let mut names: Vec<&str> = r
            .flags
            .iter()
            .map(|f| f.split(':').next().unwrap_or(f))
            .collect();
        names.dedup();
        for name in names {
            *flags.entry(name.to_string()).or_insert(0) += 1;
        }
    }
    Ok(RunSummary {
        protocol: config.protocol.name.to_string(),
        n: acc.n,
        correct: acc.correct,
        invalid: acc.invalid,
        accuracy: acc.value,
        bootstrap_std: bootstrap_std(
            &correct,
            config.bootstrap_iterations,
            config.seeds.bootstrap,
        ),
        token_report: Some(token_report(records)),
        missing_ratio: config.missing_ratio,
        seed: config.protocol.seed,
        config_hash: config_hash.to_string(),
        flags,
    })
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.decimals$}"))
}

/// Plain-text accuracy and token table, one row per summary.
pub fn render_table(summaries: &[RunSummary]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<11} {:>6} {:>16} {:>7} {:>12} {:>12} {:>12}",
        "protocol", "n", "accuracy", "invalid", "interp_tok", "agg_tok", "missing"
    );
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();
    for s in summaries {
        let t = s.token_report.as_ref();
        writeln!(
            out,
            "{:<11} {:>6} {:>16} {:>7} {:>12} {:>12} {:>12}",
            s.protocol,
            s.n,
            format!("{:.3} ± {:.3}", s.accuracy, s.bootstrap_std),
            s.invalid,
            cell(t.map(|t| t.interpretation_prompt), 1),
            cell(t.map(|t| t.aggregation_prompt), 1),
            format!("{:.2}", s.missing_ratio),
        )
        .unwrap();
    }
    out
}

/// Horizontal bars of mean prompt tokens per inference: `#` for
/// interpretation, `=` for aggregation.
pub fn render_token_bars(summaries: &[RunSummary], width: usize) -> String {
    let max = summaries
        .iter()
        .filter_map(|s| {
            s.token_report
                .map(|t| t.interpretation_prompt + t.aggregation_prompt)
        })
        .fold(0.0f64, f64::max);
    let mut out = String::new();
    for s in summaries {
        match s.token_report {
            Some(t) if max > 0.0 => {
                let a = (t.interpretation_prompt / max * width as f64).round() as usize;
                let b = (t.aggregation_prompt / max * width as f64).round() as usize;
                writeln!(
                    out,
                    "{:<11} {}{} {:.0} + {:.0}",
                    s.protocol,
                    "#".repeat(a),
                    "=".repeat(b),
                    t.interpretation_prompt,
                    t.aggregation_prompt
                )
                .unwrap();
            }
            _ => writeln!(out, "{:<11} n/a", s.protocol).unwrap(),
        }
    }
    out
}

/// One summary per (protocol, ratio). Mask plans depend only on the mask
/// seed, ratio and window set, so every protocol sees the same masks.
pub fn missingness_sweep(
    task: &TaskSpec,
    windows: &[SensorWindow],
    base: &ExperimentConfig,
    protocols: &[ProtocolConfig],
    ratios: &[f64],
    backend: &dyn ChatBackend,
) -> Result<Vec<RunSummary>, ExperimentError> {
    let mut out = Vec::with_capacity(protocols.len() * ratios.len());
    for protocol in protocols {
        for &ratio in ratios {
            let mut config = base.clone();
            config.protocol = protocol.clone();
            config.missing_ratio = ratio;
            let hash = config.config_hash();
            let records = experiment::run_in_memory(task, windows, &config, backend)?;
            out.push(summarize(&records, &config, &hash)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_has_no_spread() {
        assert_eq!(bootstrap_std(&[true; 40], 200, 1), 0.0);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let v: Vec<bool> = (0..50).map(|i| i % 3 != 0).collect();
        assert_eq!(bootstrap_std(&v, 300, 9), bootstrap_std(&v, 300, 9));
        assert_ne!(bootstrap_std(&v, 300, 9), bootstrap_std(&v, 300, 10));
    }

    #[test]
    fn bootstrap_tracks_binomial_std() {
        for n in [50usize, 150, 500] {
            let k = (0.8 * n as f64).round() as usize;
            let v: Vec<bool> = (0..n).map(|i| i < k).collect();
            let p = k as f64 / n as f64;
            let oracle = (p * (1.0 - p) / n as f64).sqrt();
            let est = bootstrap_std(&v, 2000, 3);
            assert!(
                (est - oracle).abs() / oracle < 0.1,
                "n={n} {est} vs {oracle}"
            );
        }
    }

    #[test]
    fn empty_records_error() {
        assert_eq!(accuracy(&[]), Err(EvalError::Empty));
    }
}
