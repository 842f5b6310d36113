//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string that `www/index.js` draws.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use consensus_core::dataset::{generate_synthetic, MaskPlan, SynthTemplate};
use consensus_core::features::{band_power, extract_eeg, welch_psd, EEG_BANDS};
use consensus_core::model::{AgentResponse, ModalityInput, Phase, TokenUsage};
use consensus_core::protocols::{majority_vote, weighted_vote, Vote};

const RATE_HZ: f64 = 100.0;
const SECONDS: usize = 30;
const SHOWN_HZ: f64 = 40.0;

/// A 30 s EEG-like trace: one sine per classic band plus white noise.
fn eeg_trace(amplitudes: [f64; 4], noise: f64, seed: u64) -> Vec<f64> {
    let centers = [2.0, 6.0, 10.0, 20.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..SECONDS * RATE_HZ as usize)
        .map(|i| {
            let t = i as f64 / RATE_HZ;
            let tone: f64 = centers
                .iter()
                .zip(amplitudes)
                .map(|(f, a)| a * (2.0 * PI * f * t).sin())
                .sum();
            tone + noise * (rng.random::<f64>() * 2.0 - 1.0)
        })
        .collect()
}

fn spectrum_json(amplitudes: [f64; 4], noise: f64, seed: u64) -> Result<Value, String> {
    let x = eeg_trace(amplitudes, noise, seed);
    let est = welch_psd(&x, RATE_HZ).map_err(|e| e.to_string())?;
    let keep = est
        .frequencies_hz
        .iter()
        .take_while(|f| **f <= SHOWN_HZ)
        .count();
    let bands: Vec<Value> = EEG_BANDS[..4]
        .iter()
        .map(|(name, lo, hi)| json!({"name": name, "lo": lo, "hi": hi, "power": band_power(&est, *lo, *hi).power}))
        .collect();
    let input = ModalityInput {
        modality_id: "eeg".into(),
        channels: BTreeMap::from([("signal".to_string(), x)]),
        sample_rate_hz: RATE_HZ,
        masked: false,
    };
    let features = extract_eeg(&input).map_err(|e| e.to_string())?;
    Ok(json!({
        "frequencies": &est.frequencies_hz[..keep],
        "power": &est.power[..keep],
        "peak": est.peak_frequency(),
        "bands": bands,
        "features": features.entries,
    }))
}

/// Welch spectrum, band powers and extracted features of a synthetic trace.
#[wasm_bindgen]
pub fn eeg_spectrum(
    delta: f64,
    theta: f64,
    alpha: f64,
    beta: f64,
    noise: f64,
    seed: u32,
) -> Result<String, JsError> {
    spectrum_json([delta, theta, alpha, beta], noise, seed as u64)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}

fn response(i: usize, label: Option<String>, confidence: Option<f64>) -> AgentResponse {
    AgentResponse {
        agent_id: format!("agent{i}"),
        prediction: label.into(),
        rationale: String::new(),
        confidence,
        usage: TokenUsage::zero(Phase::Interpretation),
        raw_text: String::new(),
    }
}

fn vote_json(v: Option<Vote>) -> Value {
    v.map_or(Value::Null, |v| json!({"label": v.label, "tie": v.tie}))
}

fn votes_json(input: &str) -> Result<Value, String> {
    let v: Value = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let classes: Vec<String> =
        serde_json::from_value(v["classes"].clone()).map_err(|e| format!("classes: {e}"))?;
    let agents = v["agents"].as_array().ok_or("agents must be an array")?;
    let responses: Vec<AgentResponse> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            response(
                i,
                a["label"].as_str().map(str::to_string),
                a["confidence"].as_f64(),
            )
        })
        .collect();
    Ok(json!({
        "majority": vote_json(majority_vote(&responses, &classes)),
        "weighted": vote_json(weighted_vote(&responses, &classes)),
    }))
}

/// Majority and confidence-weighted votes for
/// `{"classes": [...], "agents": [{"label": "x" | null, "confidence": 0.7 | null}]}`.
#[wasm_bindgen]
pub fn aggregate_votes(input: &str) -> Result<String, JsError> {
    votes_json(input)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}

/// Simulated modality agents on the synthetic activity dataset. A visible
/// modality's agent is right with probability `skill`; a masked one either
/// abstains or guesses a class at random.
fn missing_curve_json(skill: f64, masked_guess: bool, seed: u64) -> Value {
    let data = generate_synthetic(&SynthTemplate::demo(), 4, 10, seed);
    let classes = data.task.classes.clone();
    let refs: Vec<_> = data.windows.iter().collect();
    let n = data.task.modality_meta.len();
    let points: Vec<Value> = (0..=n)
        .map(|k| {
            let ratio = k as f64 / n as f64;
            let plan = MaskPlan::build(&refs, ratio, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k as u64);
            let (mut voted, mut agents_right, mut no_vote) = (0usize, 0usize, 0usize);
            for w in &data.windows {
                let masked = plan.masked(&w.window_id).cloned().unwrap_or_default();
                let responses: Vec<AgentResponse> = w
                    .modalities
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let label = if masked.contains(&m.modality_id) {
                            masked_guess
                                .then(|| classes[rng.random_range(0..classes.len())].clone())
                        } else if rng.random::<f64>() < skill {
                            Some(w.label.clone())
                        } else {
                            let wrong: Vec<&String> =
                                classes.iter().filter(|c| **c != w.label).collect();
                            Some(wrong[rng.random_range(0..wrong.len())].clone())
                        };
                        agents_right += usize::from(label.as_deref() == Some(w.label.as_str()));
                        response(i, label, None)
                    })
                    .collect();
                match majority_vote(&responses, &classes) {
                    Some(v) => voted += usize::from(v.label == w.label),
                    None => no_vote += 1,
                }
            }
            let windows = data.windows.len() as f64;
            json!({
                "ratio": ratio,
                "vote_accuracy": voted as f64 / windows,
                "agent_accuracy": agents_right as f64 / (windows * n as f64),
                "no_vote": no_vote as f64 / windows,
            })
        })
        .collect();
    json!({"modalities": n, "windows": data.windows.len(), "points": points})
}

/// Accuracy of the majority vote and of a lone agent as modalities drop out.
#[wasm_bindgen]
pub fn missing_curve(skill: f64, masked_guess: bool, seed: u32) -> String {
    missing_curve_json(skill.clamp(0.0, 1.0), masked_guess, seed as u64).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_tone_dominates_its_band() {
        let v = spectrum_json([0.0, 0.0, 20.0, 0.0], 1.0, 1).unwrap();
        let peak = v["peak"].as_f64().unwrap();
        assert!((peak - 10.0).abs() < 0.5, "{peak}");
        let powers: Vec<f64> = v["bands"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| b["power"].as_f64().unwrap())
            .collect();
        assert!(
            powers[2] > 10.0 * (powers[0] + powers[1] + powers[3]),
            "{powers:?}"
        );
    }

    #[test]
    fn weighted_vote_follows_confidence() {
        let v = votes_json(
            r#"{"classes": ["a", "b"], "agents": [
                {"label": "a", "confidence": 0.2}, {"label": "a", "confidence": 0.2},
                {"label": "b", "confidence": 0.9}, {"label": null, "confidence": null}]}"#,
        )
        .unwrap();
        assert_eq!(v["majority"]["label"], "a");
        assert_eq!(v["weighted"]["label"], "b");
        assert!(votes_json("{}").is_err());
    }

    #[test]
    fn masking_everything_leaves_no_vote() {
        let v = missing_curve_json(0.9, false, 3);
        let points = v["points"].as_array().unwrap();
        assert_eq!(points[0]["ratio"], 0.0);
        assert!(points[0]["vote_accuracy"].as_f64().unwrap() > 0.8);
        let last = points.last().unwrap();
        assert_eq!(last["no_vote"], 1.0);
        assert_eq!(last["vote_accuracy"], 0.0);
    }
}
