//! End-to-end runs through the filesystem with a scripted backend.

mod common;

use std::fs;
use std::path::Path;

use common::{classify, reply, Kind};
use consensus_core::backend::ScriptedBackend;
use consensus_core::dataset::{generate_synthetic, write_dataset, SynthTemplate};
use consensus_core::eval::token_report;
use consensus_core::experiment::{
    read_records, run_experiment_with, BackendConfig, ExperimentConfig, ExperimentError, Seeds,
    RECORDS_FILE, SUMMARY_FILE, SUMMARY_TABLE_FILE,
};
use consensus_core::model::Phase;
use consensus_core::protocols::{ProtocolConfig, ProtocolName};

fn backend() -> ScriptedBackend {
    ScriptedBackend::from_fn(|req| {
        let answer = match classify(req) {
            Kind::Modality(id) if id.starts_with("ACC") => "run".to_string(),
            Kind::Modality(_) | Kind::Single => "walk".to_string(),
            Kind::Statistical { anchor } => anchor,
            Kind::Semantic => "rest".to_string(),
            Kind::Hybrid { statistical, .. } => statistical.unwrap_or_default(),
            Kind::Feedback => return Some("Looks fine.".into()),
        };
        Some(reply(&answer, "scripted", Some(0.6)))
    })
}

fn setup(dir: &Path, protocol: ProtocolName) -> ExperimentConfig {
    let synth = generate_synthetic(&SynthTemplate::demo(), 2, 3, 9);
    let data = dir.join("data");
    write_dataset(&data, &synth.task, &synth.windows, Some(&synth.manifest)).unwrap();
    ExperimentConfig {
        dataset_root: data,
        protocol: ProtocolConfig::new(protocol),
        backend: BackendConfig::Scripted {
            script: dir.join("unused.json"),
            model: "scripted".into(),
        },
        missing_ratio: 0.3,
        per_class: None,
        seeds: Seeds {
            split: 3,
            subsample: 0,
            mask: 5,
            bootstrap: 8,
        },
        bootstrap_iterations: 100,
        output_dir: dir.join("out"),
        cache_dir: None,
        workers: 1,
    }
}

#[test]
fn writes_sorted_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), ProtocolName::Consensus);
    let outcome = run_experiment_with(&config, &backend()).unwrap();
    let records = read_records(&config.output_dir.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.len(), outcome.executed);
    assert!(records.windows(2).all(|w| w[0].window_id < w[1].window_id));
    let hash = config.config_hash();
    assert!(records
        .iter()
        .all(|r| r.config_hash == hash && r.exchanges.len() == 5 + 3));
    assert_eq!(outcome.summary.config_hash, hash);
    assert_eq!(outcome.summary.n, records.len());

    // Ledger conservation: report totals equal the per-exchange sums.
    let t = token_report(&records).totals;
    let sum = |phase: Phase| -> u64 {
        records
            .iter()
            .flat_map(|r| &r.exchanges)
            .filter(|e| e.phase == phase)
            .map(|e| e.usage.prompt_tokens)
            .sum()
    };
    assert_eq!(t.interpretation_prompt, sum(Phase::Interpretation));
    assert_eq!(t.aggregation_prompt, sum(Phase::Aggregation));

    // Every output file carries the hash.
    for file in [SUMMARY_FILE, SUMMARY_TABLE_FILE] {
        assert!(
            fs::read_to_string(config.output_dir.join(file))
                .unwrap()
                .contains(&hash),
            "{file}"
        );
    }
}

#[test]
fn records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), ProtocolName::Reconcile);
    run_experiment_with(&config, &backend()).unwrap();
    for r in read_records(&config.output_dir.join(RECORDS_FILE)).unwrap() {
        let back: consensus_core::experiment::RunRecord =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}

#[test]
fn resumes_after_interruption() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), ProtocolName::Debate);
    let full = run_experiment_with(&config, &backend()).unwrap();
    let path = config.output_dir.join(RECORDS_FILE);
    let complete = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = complete.lines().collect();
    // Keep two records plus half of a third.
    let torn = format!(
        "{}\n{}\n{}",
        lines[0],
        lines[1],
        &lines[2][..lines[2].len() / 2]
    );
    fs::write(&path, torn).unwrap();

    let again = run_experiment_with(&config, &backend()).unwrap();
    assert_eq!(again.resumed, 2);
    assert_eq!(again.executed, full.executed - 2);
    assert_eq!(fs::read_to_string(&path).unwrap(), complete);
    assert_eq!(again.summary, full.summary);
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = setup(dir.path(), ProtocolName::Mad);
    run_experiment_with(&config, &backend()).unwrap();
    let serial = fs::read(config.output_dir.join(RECORDS_FILE)).unwrap();
    config.output_dir = dir.path().join("parallel");
    config.workers = 4;
    run_experiment_with(&config, &backend()).unwrap();
    assert_eq!(
        fs::read(config.output_dir.join(RECORDS_FILE)).unwrap(),
        serial
    );
}

#[test]
fn mixed_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = setup(dir.path(), ProtocolName::Consensus);
    run_experiment_with(&config, &backend()).unwrap();
    config.protocol = ProtocolConfig::new(ProtocolName::StatOnly);
    let err = run_experiment_with(&config, &backend()).unwrap_err();
    assert!(matches!(err, ExperimentError::Config(_)), "{err:?}");
}

#[test]
fn config_hash_ignores_location_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let a = setup(dir.path(), ProtocolName::Consensus);
    let mut b = a.clone();
    b.output_dir = "elsewhere".into();
    b.cache_dir = Some("cache".into());
    b.workers = 8;
    assert_eq!(a.config_hash(), b.config_hash());
    b.missing_ratio = 0.5;
    assert_ne!(a.config_hash(), b.config_hash());
}

#[test]
fn scripted_misses_abort_with_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), ProtocolName::Single);
    let err = run_experiment_with(&config, &ScriptedBackend::new(Vec::new())).unwrap_err();
    assert!(matches!(err, ExperimentError::Protocol { .. }), "{err:?}");
}
