//! Scripted agent populations and small synthetic tasks shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use consensus_core::backend::{ChatRequest, ScriptedBackend};
use consensus_core::model::{ClassExamples, FeatureVector, ModalityMeta, TaskSpec, WindowFeatures};
use consensus_core::protocols::{run_protocol, ProtocolConfig, ProtocolRun, WindowContext};

pub const CLASSES: [&str; 4] = ["W", "N1", "N2", "REM"];

pub fn modality_id(i: usize) -> String {
    format!("M{i:02}")
}

pub fn task(n_modalities: usize, classes: &[&str]) -> TaskSpec {
    TaskSpec {
        description: format!("Classify the sample into one of {}.", classes.join(", ")),
        classes: classes.iter().map(|c| c.to_string()).collect(),
        class_descriptions: classes
            .iter()
            .map(|c| (c.to_string(), format!("stage {c}")))
            .collect(),
        modality_meta: (0..n_modalities)
            .map(|i| {
                (
                    modality_id(i),
                    ModalityMeta {
                        sensor_type: "TEMP".into(),
                        collection_protocol: format!("sensor {i} at 100 Hz"),
                        feature_extraction: "windowed statistics".into(),
                        sample_rate_hz: 100.0,
                    },
                )
            })
            .collect(),
    }
}

/// `n_features` named features per modality with values varied by `salt`.
pub fn window_features(task: &TaskSpec, n_features: usize, salt: f64) -> WindowFeatures {
    task.modality_meta
        .keys()
        .enumerate()
        .map(|(m, id)| {
            let mut fv = FeatureVector::new();
            for k in 0..n_features {
                let v = (1.0 + k as f64 * 0.37 + m as f64 * 1.91 + salt).sin()
                    * 10f64.powi((k % 5) as i32 - 1);
                fv.push(format!("band{k}_power"), Some(v), "µV²");
            }
            (id.clone(), fv)
        })
        .collect()
}

pub fn examples(task: &TaskSpec, n_features: usize) -> ClassExamples {
    task.classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (
                c.clone(),
                window_features(task, n_features, 10.0 + i as f64),
            )
        })
        .collect()
}

pub fn reply(answer: &str, reason: &str, confidence: Option<f64>) -> String {
    let mut v = serde_json::json!({"REASON": reason, "ANSWER": answer});
    if let Some(c) = confidence {
        v["CONFIDENCE"] = serde_json::json!(c);
    }
    v.to_string()
}

/// What a request is asking for, recovered from the template text.
#[derive(Debug, Clone, PartialEq)]
pub enum Kind {
    Single,
    Feedback,
    Modality(String),
    Semantic,
    Statistical {
        anchor: String,
    },
    Hybrid {
        semantic: Option<String>,
        statistical: Option<String>,
    },
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let i = text.find(start)? + start.len();
    let j = text[i..].find(end)?;
    Some(&text[i..i + j])
}

pub fn classify(req: &ChatRequest) -> Kind {
    let system = &req.messages[0].content;
    let last = &req.messages.last().unwrap().content;
    if system.starts_with("You are a coordinator agent") {
        let answer_after = |tag: &str| {
            let rest = &last[last.find(tag)? + tag.len()..];
            between(rest, "\"ANSWER\": \"", "\"").map(str::to_string)
        };
        Kind::Hybrid {
            semantic: answer_after("Semantic fusion agent: "),
            statistical: answer_after("Statistical fusion agent: "),
        }
    } else if system.starts_with("You are a fusion agent") {
        match between(
            last,
            "You are on the side that the correct answer is ",
            " which",
        ) {
            Some(a) => Kind::Statistical {
                anchor: a.to_string(),
            },
            None => Kind::Semantic,
        }
    } else if system.starts_with("You are multimodal sensing agent") {
        if last.starts_with("Review") {
            Kind::Feedback
        } else {
            Kind::Single
        }
    } else {
        let id = between(system, "You are ", " agent").expect("modality system prompt");
        Kind::Modality(id.to_string())
    }
}

/// Round number of a modality-agent request: one per follow-up turn.
pub fn round_of(req: &ChatRequest) -> usize {
    (req.messages.len() - 2) / 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HybridRule {
    EchoSemantic,
    EchoStatistical,
    Fixed(&'static str),
}

/// Per-agent scripted answers.
#[derive(Clone)]
pub struct Population {
    /// Modality id → answer per round (last entry repeats); `None` replies
    /// with malformed text.
    pub modality: BTreeMap<String, Vec<Option<String>>>,
    pub confidence: BTreeMap<String, f64>,
    pub single: Vec<String>,
    pub semantic: String,
    /// `None` echoes the anchor.
    pub statistical: Option<String>,
    pub hybrid: HybridRule,
    pub rationale: String,
}

impl Population {
    pub fn uniform(task: &TaskSpec, answer: &str) -> Self {
        Population {
            modality: task
                .modality_meta
                .keys()
                .map(|k| (k.clone(), vec![Some(answer.to_string())]))
                .collect(),
            confidence: BTreeMap::new(),
            single: vec![answer.to_string()],
            semantic: answer.to_string(),
            statistical: None,
            hybrid: HybridRule::EchoSemantic,
            rationale: "The features match the example.".into(),
        }
    }

    pub fn respond(&self, req: &ChatRequest) -> String {
        let r = &self.rationale;
        match classify(req) {
            Kind::Single => {
                let i = req.seed_hint.unwrap_or(0) as usize % self.single.len();
                reply(&self.single[i], r, None)
            }
            Kind::Feedback => "No problems found.".into(),
            Kind::Modality(id) => {
                let answers = &self.modality[&id];
                let k = round_of(req).min(answers.len() - 1);
                match &answers[k] {
                    Some(a) => reply(a, r, Some(*self.confidence.get(&id).unwrap_or(&0.5))),
                    None => "I am not sure.".into(),
                }
            }
            Kind::Semantic => reply(&self.semantic, r, None),
            Kind::Statistical { anchor } => {
                reply(self.statistical.as_deref().unwrap_or(&anchor), r, None)
            }
            Kind::Hybrid {
                semantic,
                statistical,
            } => {
                let a = match self.hybrid {
                    HybridRule::EchoSemantic => semantic.unwrap_or_default(),
                    HybridRule::EchoStatistical => statistical.unwrap_or_default(),
                    HybridRule::Fixed(a) => a.to_string(),
                };
                reply(&a, r, None)
            }
        }
    }

    pub fn backend(self) -> ScriptedBackend {
        let p = Arc::new(self);
        ScriptedBackend::from_fn(move |req| Some(p.respond(req)))
    }
}

/// Runs one protocol on a fixture window.
pub fn run(
    task: &TaskSpec,
    features: &WindowFeatures,
    examples: &ClassExamples,
    backend: &ScriptedBackend,
    config: &ProtocolConfig,
) -> ProtocolRun {
    let ctx = WindowContext {
        task,
        features,
        examples,
        backend,
        model: "scripted",
    };
    run_protocol(ctx, config).expect("protocol run")
}

/// Plain prose of exactly `tokens` estimated tokens (one per short word).
pub fn rationale_of_tokens(tokens: usize) -> String {
    let words = [
        "the", "wave", "band", "rose", "when", "beta", "fell", "so", "this", "fits",
    ];
    (0..tokens)
        .map(|i| words[i % words.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Independent plurality count: ABSTAIN (None) ignored, ties to the
/// earliest class.
pub fn oracle_vote(answers: &[Option<&str>], classes: &[&str]) -> Option<String> {
    let mut best: Option<(&str, usize)> = None;
    for c in classes {
        let n = answers.iter().filter(|a| **a == Some(*c)).count();
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c.to_string())
}
