//! Summary tables across result directories and per-window transcripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use consensus_core::eval::{render_table, render_token_bars, RunSummary};
use consensus_core::experiment::{read_records, RECORDS_FILE, SUMMARY_FILE};

use crate::CliError;

/// Directories holding a summary, found at or below each path.
fn result_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
        if dir.join(SUMMARY_FILE).is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for c in children {
            walk(&c, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            return Err(CliError::config(format!(
                "{} is not a directory",
                p.display()
            )));
        }
        walk(p, &mut out)?;
    }
    Ok(out)
}

fn load_summary(dir: &Path, warnings: &mut Vec<String>) -> Result<RunSummary, CliError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let summary: RunSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if summary.token_report.is_none() {
        warnings.push(format!("{} has no token ledger", path.display()));
    }
    let records = read_records(&dir.join(RECORDS_FILE))?;
    if let Some(r) = records
        .iter()
        .find(|r| r.config_hash != summary.config_hash)
    {
        return Err(CliError::config(format!(
            "{} mixes configs: summary {} but record {} has {}",
            dir.display(),
            summary.config_hash,
            r.window_id,
            r.config_hash
        )));
    }
    Ok(summary)
}

/// Table, token bars and a directory legend for every summary found.
pub fn report(paths: &[PathBuf], width: usize) -> Result<(String, Vec<String>), CliError> {
    let dirs = result_dirs(paths)?;
    if dirs.is_empty() {
        return Err(CliError::config("no summaries found"));
    }
    let mut warnings = Vec::new();
    let summaries = dirs
        .iter()
        .map(|d| load_summary(d, &mut warnings))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = render_table(&summaries);
    out.push('\n');
    out.push_str(&render_token_bars(&summaries, width));
    out.push('\n');
    for (d, s) in dirs.iter().zip(&summaries) {
        writeln!(
            out,
            "{:<11} {} {}",
            s.protocol,
            &s.config_hash[..12.min(s.config_hash.len())],
            d.display()
        )
        .unwrap();
    }
    Ok((out, warnings))
}

/// Every exchange of one window, grouped into role sections.
pub fn inspect(results: &Path, window_id: &str) -> Result<String, CliError> {
    let records = read_records(&results.join(RECORDS_FILE))?;
    let record = records
        .iter()
        .find(|r| r.window_id == window_id)
        .ok_or_else(|| {
            CliError::config(format!(
                "no record for window `{window_id}` in {}",
                results.display()
            ))
        })?;
    let mut out = String::new();
    writeln!(
        out,
        "window {} (subject {}, label {}) protocol {}",
        record.window_id, record.subject_id, record.label, record.protocol
    )
    .unwrap();
    writeln!(
        out,
        "prediction {} valid {}",
        record.prediction, record.valid
    )
    .unwrap();
    if let Some(a) = &record.vote_anchor {
        writeln!(out, "vote anchor {a}").unwrap();
    }
    if !record.masked_modalities.is_empty() {
        writeln!(out, "masked {}", record.masked_modalities.join(", ")).unwrap();
    }
    if !record.flags.is_empty() {
        writeln!(out, "flags {}", record.flags.join(", ")).unwrap();
    }
    let mut section = None;
    for e in &record.exchanges {
        if section != Some(e.role) {
            section = Some(e.role);
            writeln!(out, "\n# {}", e.role.as_str().to_uppercase()).unwrap();
        }
        writeln!(
            out,
            "\n## {} round {} attempt {} ({}, {:?}, {} prompt tokens)",
            e.agent_id, e.round, e.attempt, e.template_id, e.phase, e.usage.prompt_tokens
        )
        .unwrap();
        for m in &e.messages {
            writeln!(out, "--- {:?}\n{}", m.role, m.content).unwrap();
        }
        writeln!(out, "--- reply\n{}", e.response_text).unwrap();
        if let Some(p) = &e.parse_error {
            writeln!(out, "--- parse error: {p}").unwrap();
        }
    }
    Ok(out)
}
