mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use common::{oracle_vote, HybridRule, Population, CLASSES};
use consensus_core::backend::estimate_tokens;
use consensus_core::dataset::{
    apply_mask_plan, generate_synthetic, within_subject_split, MaskPlan, SynthTemplate,
};
use consensus_core::features::{band_power, extract_modality, welch_psd, SensorType};
use consensus_core::model::{AgentResponse, ModalityInput, Phase, TokenUsage};
use consensus_core::prompts::parse_reply;
use consensus_core::protocols::{majority_vote, weighted_vote, ProtocolConfig, ProtocolName};

fn response(id: usize, label: Option<&str>, confidence: Option<f64>) -> AgentResponse {
    AgentResponse {
        agent_id: format!("a{id}"),
        prediction: label.map(str::to_string).into(),
        rationale: String::new(),
        confidence,
        usage: TokenUsage::zero(Phase::Interpretation),
        raw_text: String::new(),
    }
}

fn classes() -> Vec<String> {
    CLASSES.iter().map(|c| c.to_string()).collect()
}

fn agents() -> impl Strategy<Value = Vec<(Option<usize>, Option<f64>)>> {
    prop::collection::vec(
        (
            prop::option::weighted(0.85, 0..4usize),
            prop::option::of(0.0..1.0f64),
        ),
        1..9,
    )
}

fn single(x: Vec<f64>, rate: f64) -> ModalityInput {
    ModalityInput {
        modality_id: "m".into(),
        channels: BTreeMap::from([("signal".to_string(), x)]),
        sample_rate_hz: rate,
        masked: false,
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn votes_ignore_agent_order(agents in agents(), seed in any::<u64>()) {
        let rs: Vec<AgentResponse> = agents
            .iter()
            .enumerate()
            .map(|(i, (l, c))| response(i, l.map(|l| CLASSES[l]), *c))
            .collect();
        let mut shuffled = rs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize ^ i.wrapping_mul(2654435761)) % (i + 1));
        }
        prop_assert_eq!(majority_vote(&rs, &classes()), majority_vote(&shuffled, &classes()));
        prop_assert_eq!(weighted_vote(&rs, &classes()), weighted_vote(&shuffled, &classes()));
    }

    #[test]
    fn majority_matches_oracle(agents in agents()) {
        let labels: Vec<Option<&str>> = agents.iter().map(|(l, _)| l.map(|l| CLASSES[l])).collect();
        let rs: Vec<AgentResponse> = labels.iter().enumerate().map(|(i, l)| response(i, *l, None)).collect();
        prop_assert_eq!(majority_vote(&rs, &classes()).map(|v| v.label), oracle_vote(&labels, &CLASSES));
    }

    #[test]
    fn equal_confidences_reduce_to_majority(labels in prop::collection::vec(0..4usize, 1..9), c in 0.01..1.0f64) {
        let rs: Vec<AgentResponse> = labels.iter().enumerate().map(|(i, l)| response(i, Some(CLASSES[*l]), Some(c))).collect();
        prop_assert_eq!(
            weighted_vote(&rs, &classes()).map(|v| v.label),
            majority_vote(&rs, &classes()).map(|v| v.label)
        );
    }

    #[test]
    fn token_estimate_grows_with_text(a in "[a-zA-Z0-9 ,.{}:\"]{0,200}", b in "[a-zA-Z0-9 ,.{}:\"]{0,200}") {
        prop_assert!(estimate_tokens(&(a.clone() + &b)) >= estimate_tokens(&a));
    }

    #[test]
    fn repeated_text_costs_about_twice(words in prop::collection::vec("[a-z]{1,12}|[0-9]{1,6}|[.,:]", 10..80)) {
        let text = words.join(" ");
        let once = estimate_tokens(&text) as f64;
        let twice = estimate_tokens(&text.repeat(2)) as f64;
        prop_assert!(once > 0.0);
        prop_assert!((1.8..=2.2).contains(&(twice / once)), "{} vs {}", twice, once);
    }

    #[test]
    fn band_power_is_additive(
        freqs in prop::collection::vec(0.5..45.0f64, 1..4),
        lo in 0.0..20.0f64,
        w1 in 0.1..10.0f64,
        w2 in 0.1..10.0f64,
    ) {
        let rate = 100.0;
        let x: Vec<f64> = (0..1000)
            .map(|i| freqs.iter().map(|f| (2.0 * PI * f * i as f64 / rate).sin()).sum())
            .collect();
        let est = welch_psd(&x, rate).unwrap();
        let (mid, hi) = (lo + w1, lo + w1 + w2);
        let whole = band_power(&est, lo, hi).power;
        let parts = band_power(&est, lo, mid).power + band_power(&est, mid, hi).power;
        prop_assert!(close(whole, parts, 1e-9), "{} vs {}", whole, parts);
    }

    #[test]
    fn welch_peak_matches_dft(n in 32usize..=64, k_frac in 0.05..0.95f64, amp in 0.1..100.0f64) {
        let rate = 64.0;
        let k = ((k_frac * (n / 2) as f64) as usize).clamp(1, n / 2 - 1);
        let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * (k * i) as f64 / n as f64).cos()).collect();
        // Naive DFT magnitude argmax over positive frequencies.
        let oracle = (1..=n / 2)
            .map(|j| {
                let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                    let a = 2.0 * PI * (j * t) as f64 / n as f64;
                    (re + v * a.cos(), im - v * a.sin())
                });
                (j, re * re + im * im)
            })
            .fold((0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0 as f64 * rate / n as f64;
        let peak = welch_psd(&x, rate).unwrap().peak_frequency().unwrap();
        prop_assert!((peak - oracle).abs() < 1e-9, "welch {} vs dft {}", peak, oracle);
    }

    #[test]
    fn compliant_replies_round_trip(class in 0..4usize, reason in "[ -~]{0,80}", fenced in any::<bool>()) {
        let task = common::task(2, &CLASSES);
        let body = common::reply(CLASSES[class], &reason, None);
        let raw = if fenced { format!("```json\n{body}\n```") } else { body };
        let parsed = parse_reply(&raw, &task, false).unwrap();
        prop_assert_eq!(parsed.answer, CLASSES[class]);
        prop_assert_eq!(parsed.reason, reason);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_keeps_ratios_and_scales_moments(scale in 0.01..100.0f64, f in 1.0..30.0f64) {
        let rate = 100.0;
        let x: Vec<f64> = (0..3000).map(|i| 5.0 + 20.0 * (2.0 * PI * f * i as f64 / rate).sin() + 3.0 * (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let a = extract_modality(&single(x.clone(), rate), SensorType::Eeg).unwrap();
        let b = extract_modality(&single(y.clone(), rate), SensorType::Eeg).unwrap();
        for name in ["delta_theta_ratio", "theta_alpha_ratio", "alpha_beta_ratio", "slow_fast_ratio"] {
            match (a.get(name), b.get(name)) {
                (Some(p), Some(q)) => prop_assert!(close(p, q, 1e-6), "{} {} vs {}", name, p, q),
                (p, q) => prop_assert_eq!(p.is_some(), q.is_some()),
            }
        }
        let a = extract_modality(&single(x, rate), SensorType::Temp).unwrap();
        let b = extract_modality(&single(y, rate), SensorType::Temp).unwrap();
        for name in ["mean", "std"] {
            prop_assert!(close(a.get(name).unwrap() * scale, b.get(name).unwrap(), 1e-9), "{}", name);
        }
    }

    #[test]
    fn masks_are_exact_nested_and_idempotent(seed in any::<u64>(), r1 in 0.0..1.0f64, r2 in 0.0..1.0f64) {
        let synth = generate_synthetic(&SynthTemplate::demo(), 2, 2, 3);
        let refs: Vec<_> = synth.windows.iter().collect();
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let small = MaskPlan::build(&refs, lo, seed);
        let big = MaskPlan::build(&refs, hi, seed);
        for w in &synth.windows {
            let n = w.modalities.len() as f64;
            let a = small.masked(&w.window_id).unwrap();
            let b = big.masked(&w.window_id).unwrap();
            prop_assert_eq!(a.len(), (n * lo).round() as usize);
            prop_assert_eq!(b.len(), (n * hi).round() as usize);
            prop_assert!(a.is_subset(b));
            let once = apply_mask_plan(w, &big).unwrap();
            prop_assert_eq!(apply_mask_plan(&once, &big).unwrap(), once.clone());
            for m in &once.modalities {
                prop_assert_eq!(m.masked, b.contains(&m.modality_id));
                if m.masked {
                    prop_assert!(m.channels.values().flatten().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn splits_never_leak(seed in any::<u64>()) {
        let synth = generate_synthetic(&SynthTemplate::demo(), 2, 3, seed % 7);
        let split = within_subject_split(&synth.task, &synth.windows, seed);
        prop_assert!(split.example_windows.iter().all(|e| !split.test_windows.contains(e)));
    }

    #[test]
    fn statistical_branch_follows_the_vote(
        answers in prop::collection::vec(prop::option::weighted(0.85, 0..4usize), 2..8),
        semantic in 0..4usize,
    ) {
        let task = common::task(answers.len(), &CLASSES);
        let mut pop = Population::uniform(&task, "W");
        for (slot, a) in pop.modality.values_mut().zip(&answers) {
            *slot = vec![a.map(|a| CLASSES[a].to_string())];
        }
        pop.semantic = CLASSES[semantic].to_string();
        pop.hybrid = HybridRule::EchoSemantic;
        let features = common::window_features(&task, 2, 0.0);
        let examples = common::examples(&task, 2);
        let run = common::run(&task, &features, &examples, &pop.backend(), &ProtocolConfig::new(ProtocolName::Consensus));
        let labels: Vec<Option<&str>> = answers.iter().map(|a| a.map(|a| CLASSES[a])).collect();
        let oracle = oracle_vote(&labels, &CLASSES);
        prop_assert_eq!(run.vote_anchor.clone(), oracle.clone());
        if let Some(stat) = run.fusion.as_ref().and_then(|f| f.statistical.as_ref()) {
            prop_assert_eq!(stat.prediction.label(), oracle.as_deref());
        }
        // Every exchange lands in exactly one phase and the totals add up.
        let total: u64 = run.exchanges.iter().map(|e| e.usage.prompt_tokens).sum();
        let split = run.usage(Phase::Interpretation).prompt_tokens + run.usage(Phase::Aggregation).prompt_tokens;
        prop_assert_eq!(total, split);
    }

    #[test]
    fn degenerate_inputs_give_zero_or_undefined(len in 300usize..1200) {
        for sensor in [SensorType::Eeg, SensorType::Eog, SensorType::Emg, SensorType::Eda, SensorType::Resp, SensorType::Temp, SensorType::Ecg] {
            let rate = if sensor == SensorType::Emg { 1000.0 } else { 100.0 };
            let fv = extract_modality(&single(vec![0.0; len], rate), sensor).unwrap();
            for name in fv.names() {
                let v = fv.get(name);
                prop_assert!(v.is_none_or(|v| v == 0.0), "{:?} {} = {:?}", sensor, name, v);
            }
        }
    }
}
