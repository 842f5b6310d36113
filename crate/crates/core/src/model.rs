//! Shared data model: task description, sensor windows, agent responses and
//! fusion results.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Per-modality metadata carried into prompts and used to route extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityMeta {
    /// Sensor-type tag (`ACC`, `ECG`, `EEG`, ...) selecting the feature extractor.
    pub sensor_type: String,
    pub collection_protocol: String,
    pub feature_extraction: String,
    pub sample_rate_hz: f64,
}

/// Task description, ordered label set and modality metadata.
///
/// Class order is significant: every vote tie is broken towards the class
/// listed first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub description: String,
    pub classes: Vec<String>,
    #[serde(default)]
    pub class_descriptions: BTreeMap<String, String>,
    #[serde(rename = "modalities")]
    pub modality_meta: BTreeMap<String, ModalityMeta>,
}

impl TaskSpec {
    /// Matches free-form label text against the class list after trimming and
    /// case-folding. Returns the canonical class string.
    pub fn match_label(&self, text: &str) -> Option<&str> {
        let wanted = normalize_label(text);
        self.classes
            .iter()
            .find(|c| normalize_label(c) == wanted)
            .map(String::as_str)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Checks the structural invariants; returns human-readable violations.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.classes.is_empty() {
            out.push("task has no classes".to_string());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i]
                .iter()
                .any(|d| normalize_label(d) == normalize_label(c))
            {
                out.push(format!("duplicate class `{c}`"));
            }
        }
        for (id, meta) in &self.modality_meta {
            if !meta.sample_rate_hz.is_finite() || meta.sample_rate_hz <= 0.0 {
                out.push(format!("modality `{id}` has non-positive sample rate"));
            }
        }
        out
    }
}

/// Trim plus Unicode lowercase.
pub fn normalize_label(text: &str) -> String {
    text.trim().to_lowercase()
}

/// One modality's raw series for a single window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityInput {
    pub modality_id: String,
    /// Named channels; all the same length.
    pub channels: BTreeMap<String, Vec<f64>>,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub masked: bool,
}

impl ModalityInput {
    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Returns the sole channel of a single-channel modality.
    pub fn single_channel(&self) -> Option<&[f64]> {
        if self.channels.len() == 1 {
            self.channels.values().next().map(Vec::as_slice)
        } else {
            None
        }
    }

    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = &self.modality_id;
        if self.channels.is_empty() {
            out.push(format!("modality `{id}` has no channels"));
        }
        let n = self.len();
        if n == 0 {
            out.push(format!("modality `{id}` has empty channels"));
        }
        if self.channels.values().any(|c| c.len() != n) {
            out.push(format!("modality `{id}` has channels of unequal length"));
        }
        if self.sample_rate_hz.is_nan() || self.sample_rate_hz <= 0.0 {
            out.push(format!("modality `{id}` has non-positive sample rate"));
        }
        if self.masked && self.channels.values().flatten().any(|&v| v != 0.0) {
            out.push(format!(
                "modality `{id}` is masked but has non-zero samples"
            ));
        }
        out
    }
}

/// One inference sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub window_id: String,
    pub subject_id: String,
    pub label: String,
    pub modalities: Vec<ModalityInput>,
}

impl SensorWindow {
    pub fn modality(&self, id: &str) -> Option<&ModalityInput> {
        self.modalities.iter().find(|m| m.modality_id == id)
    }

    pub fn check(&self, task: &TaskSpec) -> Vec<String> {
        let mut out = Vec::new();
        if task.class_index(&self.label).is_none() {
            out.push(format!("label `{}` is not a task class", self.label));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if self.modalities[..i]
                .iter()
                .any(|o| o.modality_id == m.modality_id)
            {
                out.push(format!("duplicate modality `{}`", m.modality_id));
            }
            if !task.modality_meta.contains_key(&m.modality_id) {
                out.push(format!(
                    "modality `{}` missing from task metadata",
                    m.modality_id
                ));
            }
            out.extend(m.check());
        }
        out
    }
}

/// A single named feature. `value == None` means undefined (rendered `N/A`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub entries: Vec<Feature>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a feature; non-finite values are stored as undefined.
    pub fn push(&mut self, name: impl Into<String>, value: Option<f64>, unit: &str) {
        let name = name.into();
        debug_assert!(
            self.get_entry(&name).is_none(),
            "duplicate feature name {name}"
        );
        self.entries.push(Feature {
            name,
            value: value.filter(|v| v.is_finite()),
            unit: unit.to_string(),
        });
    }

    pub fn defined(&mut self, name: impl Into<String>, value: f64, unit: &str) {
        self.push(name, Some(value), unit);
    }

    pub fn get_entry(&self, name: &str) -> Option<&Feature> {
        self.entries.iter().find(|f| f.name == name)
    }

    /// Value of a feature; `None` when absent or undefined.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.get_entry(name).and_then(|f| f.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|f| f.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: FeatureVector) {
        for f in other.entries {
            self.push(f.name, f.value, &f.unit);
        }
    }
}

/// Features for every modality of one window, keyed by modality id.
pub type WindowFeatures = BTreeMap<String, FeatureVector>;

/// One-shot examples: class → modality id → features.
pub type ClassExamples = BTreeMap<String, WindowFeatures>;

/// An agent's answer: a class label or an explicit abstention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum Prediction {
    Label(String),
    Abstain,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::Abstain => None,
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, Prediction::Abstain)
    }
}

impl From<Option<String>> for Prediction {
    fn from(v: Option<String>) -> Self {
        v.map_or(Prediction::Abstain, Prediction::Label)
    }
}

impl From<Prediction> for Option<String> {
    fn from(p: Prediction) -> Self {
        match p {
            Prediction::Label(l) => Some(l),
            Prediction::Abstain => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Label(l) => f.write_str(l),
            Prediction::Abstain => f.write_str("ABSTAIN"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Interpretation,
    Aggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub phase: Phase,
    #[serde(default)]
    pub approximate: bool,
}

impl TokenUsage {
    pub fn zero(phase: Phase) -> Self {
        TokenUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
            phase,
            approximate: false,
        }
    }

    /// Adds another usage of the same phase.
    pub fn accumulate(&mut self, other: &TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.approximate |= other.approximate;
    }
}

/// One agent's final parsed output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent_id: String,
    pub prediction: Prediction,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Usage summed over every exchange that produced this response
    /// (including a parse retry).
    pub usage: TokenUsage,
    pub raw_text: String,
}

impl AgentResponse {
    pub fn abstain(agent_id: impl Into<String>, raw_text: String, usage: TokenUsage) -> Self {
        AgentResponse {
            agent_id: agent_id.into(),
            prediction: Prediction::Abstain,
            rationale: String::new(),
            confidence: None,
            usage,
            raw_text,
        }
    }
}

/// Output of the fusion stage. Branches are absent for truncated pipelines
/// (semantic-only / statistical-only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub per_modality: Vec<AgentResponse>,
    pub vote_anchor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<AgentResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistical: Option<AgentResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<AgentResponse>,
}

/// A single invariant violation found by [`validate_run_record`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub agent_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.agent_id, self.message)
    }
}

/// Reports every violated fusion-record invariant. Never mutates.
pub fn validate_run_record(record: &FusionResult, task: &TaskSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let check_response = |r: &AgentResponse, out: &mut Vec<Violation>| {
        if let Prediction::Label(l) = &r.prediction {
            if task.class_index(l).is_none() {
                out.push(Violation {
                    agent_id: r.agent_id.clone(),
                    message: format!("prediction `{l}` is not a task class"),
                });
            }
        }
        if let Some(c) = r.confidence {
            if !(0.0..=1.0).contains(&c) {
                out.push(Violation {
                    agent_id: r.agent_id.clone(),
                    message: format!("confidence {c} outside [0, 1]"),
                });
            }
        }
    };
    for r in &record.per_modality {
        check_response(r, &mut out);
    }
    if task.class_index(&record.vote_anchor).is_none() {
        out.push(Violation {
            agent_id: "vote".into(),
            message: format!("vote anchor `{}` is not a task class", record.vote_anchor),
        });
    }
    if let Some(sem) = &record.semantic {
        check_response(sem, &mut out);
    }
    if let Some(stat) = &record.statistical {
        check_response(stat, &mut out);
        if let Prediction::Label(l) = &stat.prediction {
            if *l != record.vote_anchor {
                out.push(Violation {
                    agent_id: stat.agent_id.clone(),
                    message: format!(
                        "statistical prediction `{l}` defies vote anchor `{}`",
                        record.vote_anchor
                    ),
                });
            }
        }
    }
    if let Some(hyb) = &record.hybrid {
        check_response(hyb, &mut out);
        if hyb.prediction.is_abstain() {
            out.push(Violation {
                agent_id: hyb.agent_id.clone(),
                message: "invalid run: hybrid prediction is ABSTAIN".into(),
            });
        }
    }
    out
}
