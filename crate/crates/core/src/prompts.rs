//! Prompt rendering from the text templates in `templates/` and strict-JSON
//! reply parsing.
//!
//! Templates use `{{name}}` placeholders. Filling is a single left-to-right
//! pass: substituted text is never rescanned, so agent rationales containing
//! braces cannot inject template syntax. A placeholder without a value is an
//! error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AgentResponse, ClassExamples, FeatureVector, Prediction, TaskSpec, WindowFeatures,
};

/// Template assets by id.
pub const TEMPLATES: &[(&str, &str)] = &[
    (
        "task_description",
        include_str!("../templates/task_description.txt"),
    ),
    (
        "single_agent.system",
        include_str!("../templates/single_agent.system.txt"),
    ),
    (
        "single_agent.user",
        include_str!("../templates/single_agent.user.txt"),
    ),
    (
        "modality_agent.system",
        include_str!("../templates/modality_agent.system.txt"),
    ),
    (
        "modality_agent.user",
        include_str!("../templates/modality_agent.user.txt"),
    ),
    ("examples", include_str!("../templates/examples.txt")),
    ("instruction", include_str!("../templates/instruction.txt")),
    ("formatting", include_str!("../templates/formatting.txt")),
    (
        "formatting_confidence",
        include_str!("../templates/formatting_confidence.txt"),
    ),
    (
        "fusion.system",
        include_str!("../templates/fusion.system.txt"),
    ),
    (
        "semantic_fusion.user",
        include_str!("../templates/semantic_fusion.user.txt"),
    ),
    (
        "statistical_fusion.user",
        include_str!("../templates/statistical_fusion.user.txt"),
    ),
    (
        "hybrid_fusion.system",
        include_str!("../templates/hybrid_fusion.system.txt"),
    ),
    (
        "hybrid_fusion.user",
        include_str!("../templates/hybrid_fusion.user.txt"),
    ),
    (
        "debate_round.user",
        include_str!("../templates/debate_round.user.txt"),
    ),
    (
        "cmd_round.user",
        include_str!("../templates/cmd_round.user.txt"),
    ),
    (
        "refine_feedback.user",
        include_str!("../templates/refine_feedback.user.txt"),
    ),
    (
        "refine_revise.user",
        include_str!("../templates/refine_revise.user.txt"),
    ),
    ("retry", include_str!("../templates/retry.txt")),
];

pub const NO_VALID_ANSWER: &str = "no valid answer";

fn template(id: &str) -> &'static str {
    TEMPLATES
        .iter()
        .find(|(k, _)| *k == id)
        .map(|(_, t)| t.strip_suffix('\n').unwrap_or(t))
        .unwrap_or_else(|| panic!("unknown template `{id}`"))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template `{template}` has no value for placeholder `{name}`")]
    Unresolved { template: String, name: String },
    #[error("no example for class `{0}`")]
    MissingExample(String),
    #[error("modality `{0}` is not part of the task")]
    UnknownModality(String),
    #[error("no features for modality `{0}`")]
    MissingFeatures(String),
    #[error("every agent response is ABSTAIN")]
    AllAbstain,
    #[error("anchor `{0}` is not a task class")]
    AnchorNotClass(String),
    #[error("fusion response `{0}` is missing")]
    MissingFusion(&'static str),
}

/// Rendered system and user prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
    pub template_id: String,
    /// Placeholder name → what filled it, for audit dumps.
    pub fill_report: Vec<(String, String)>,
}

/// Single-pass `{{name}}` substitution.
pub fn fill(template_id: &str, text: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len() * 2);
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start + 2..].find("}}") else {
            break;
        };
        let name = &rest[start + 2..start + 2 + len];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::Unresolved {
                template: template_id.to_string(),
                name: name.to_string(),
            })?;
        out.push_str(&rest[..start]);
        out.push_str(value);
        rest = &rest[start + 2 + len + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn render(id: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    fill(id, template(id), values)
}

/// `%.4g`-style formatting: four significant digits, trailing zeros dropped,
/// exponent form outside `[1e-4, 1e4)`.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.3e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..4).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (3 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn feature_lines(fv: &FeatureVector, prefix: Option<&str>) -> String {
    fv.entries
        .iter()
        .map(|f| {
            let value = f.value.map_or_else(|| "N/A".to_string(), format_value);
            let name = match prefix {
                Some(p) => format!("{p} {}", f.name),
                None => f.name.clone(),
            };
            if f.unit.is_empty() {
                format!("  - {name}: {value}")
            } else {
                format!("  - {name} ({}): {value}", f.unit)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn all_feature_lines(features: &WindowFeatures) -> String {
    features
        .iter()
        .map(|(id, fv)| feature_lines(fv, Some(id)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Comma-separated class list in task order.
pub fn class_list(task: &TaskSpec) -> String {
    task.classes.join(", ")
}

fn class_descriptions(task: &TaskSpec) -> String {
    if task
        .class_descriptions
        .values()
        .all(|d| d.trim().is_empty())
    {
        return class_list(task);
    }
    let parts: Vec<String> = task
        .classes
        .iter()
        .map(|c| {
            let d = task.class_descriptions.get(c).map_or("", String::as_str);
            format!("{}: {}", json_str(c), json_str(d))
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn modality_info(task: &TaskSpec, only: Option<&str>) -> String {
    let parts: Vec<String> = task
        .modality_meta
        .iter()
        .filter(|(id, _)| only.is_none_or(|o| o == id.as_str()))
        .map(|(id, m)| {
            format!(
                "{}: {{\"Data collection\": {}, \"Feature extraction\": {}}}",
                json_str(id),
                json_str(&m.collection_protocol),
                json_str(&m.feature_extraction)
            )
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// The shared task block, covering all modalities or just one.
pub fn task_description(task: &TaskSpec, only: Option<&str>) -> Result<String, PromptError> {
    render(
        "task_description",
        &[
            ("task", &task.description),
            ("class_descriptions", &class_descriptions(task)),
            ("modality_info", &modality_info(task, only)),
        ],
    )
}

fn formatting(task: &TaskSpec, confidence: bool) -> Result<String, PromptError> {
    let id = if confidence {
        "formatting_confidence"
    } else {
        "formatting"
    };
    render(id, &[("classes", &class_list(task))])
}

fn instruction(task: &TaskSpec) -> Result<String, PromptError> {
    render("instruction", &[("classes", &class_list(task))])
}

fn examples_block(
    task: &TaskSpec,
    lines_for: impl Fn(&str) -> Result<String, PromptError>,
) -> Result<String, PromptError> {
    let mut blocks = Vec::new();
    for class in &task.classes {
        blocks.push(format!("Example of {class}:\n{}", lines_for(class)?));
    }
    render("examples", &[("example_blocks", &blocks.join("\n"))])
}

fn sample_block(lines: &str) -> String {
    format!("Current sample features:\n{lines}")
}

/// Options shared by the interpretation prompts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Ask for a CONFIDENCE key (ReConcile).
    pub confidence: bool,
}

/// All-modality prompt for the single-agent baselines.
pub fn render_single_agent(
    task: &TaskSpec,
    features: &WindowFeatures,
    examples: &ClassExamples,
    opts: RenderOptions,
) -> Result<PromptPair, PromptError> {
    let td = task_description(task, None)?;
    let system = render("single_agent.system", &[("task_description", &td)])?;
    let ex = examples_block(task, |class| {
        examples
            .get(class)
            .map(all_feature_lines)
            .ok_or_else(|| PromptError::MissingExample(class.to_string()))
    })?;
    let sample = sample_block(&all_feature_lines(features));
    let user = render(
        "single_agent.user",
        &[
            ("examples", &ex),
            ("sample", &sample),
            ("instruction", &instruction(task)?),
            ("formatting", &formatting(task, opts.confidence)?),
        ],
    )?;
    Ok(PromptPair {
        system,
        user,
        template_id: "single_agent".into(),
        fill_report: vec![
            (
                "task_description".into(),
                "task metadata, all modalities".into(),
            ),
            (
                "examples".into(),
                format!("{} class examples", task.classes.len()),
            ),
            ("sample".into(), format!("{} modalities", features.len())),
        ],
    })
}

/// Prompt restricted to one modality's metadata and features.
pub fn render_modality_agent(
    task: &TaskSpec,
    modality: &str,
    features: &FeatureVector,
    examples: &ClassExamples,
    opts: RenderOptions,
) -> Result<PromptPair, PromptError> {
    if !task.modality_meta.contains_key(modality) {
        return Err(PromptError::UnknownModality(modality.to_string()));
    }
    let system = modality_system(task, modality)?;
    let ex = examples_block(task, |class| {
        let wf = examples
            .get(class)
            .ok_or_else(|| PromptError::MissingExample(class.to_string()))?;
        wf.get(modality)
            .map(|fv| feature_lines(fv, None))
            .ok_or_else(|| PromptError::MissingFeatures(modality.to_string()))
    })?;
    let sample = sample_block(&feature_lines(features, None));
    let user = render(
        "modality_agent.user",
        &[
            ("modality", modality),
            ("examples", &ex),
            ("sample", &sample),
            ("instruction", &instruction(task)?),
            ("formatting", &formatting(task, opts.confidence)?),
        ],
    )?;
    Ok(PromptPair {
        system,
        user,
        template_id: "modality_agent".into(),
        fill_report: vec![
            ("modality".into(), modality.to_string()),
            (
                "task_description".into(),
                format!("task metadata, {modality} only"),
            ),
            (
                "examples".into(),
                format!("{} class examples", task.classes.len()),
            ),
        ],
    })
}

fn modality_system(task: &TaskSpec, modality: &str) -> Result<String, PromptError> {
    let td = task_description(task, Some(modality))?;
    render(
        "modality_agent.system",
        &[("modality", modality), ("task_description", &td)],
    )
}

fn response_object(r: &AgentResponse, confidence: bool) -> String {
    match &r.prediction {
        Prediction::Abstain => json_str(NO_VALID_ANSWER),
        Prediction::Label(l) => {
            let conf = match (confidence, r.confidence) {
                (true, Some(c)) => format!(", \"CONFIDENCE\": {}", format_value(c)),
                _ => String::new(),
            };
            format!(
                "{{\"REASON\": \"{}\", \"ANSWER\": \"{l}\"{conf}}}",
                r.rationale
            )
        }
    }
}

/// Agent responses keyed by agent id. Rationales are embedded as-is.
pub fn render_responses(responses: &[AgentResponse], confidence: bool) -> String {
    let parts: Vec<String> = responses
        .iter()
        .map(|r| {
            format!(
                "{}: {}",
                json_str(&r.agent_id),
                response_object(r, confidence)
            )
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn require_answer(responses: &[AgentResponse]) -> Result<(), PromptError> {
    if responses.iter().all(|r| r.prediction.is_abstain()) {
        Err(PromptError::AllAbstain)
    } else {
        Ok(())
    }
}

fn fusion_system(task: &TaskSpec) -> Result<String, PromptError> {
    let td = task_description(task, None)?;
    render("fusion.system", &[("task_description", &td)])
}

/// Knowledge-grounded aggregation of modality responses. Also the MAD judge.
pub fn render_semantic_fusion(
    task: &TaskSpec,
    responses: &[AgentResponse],
) -> Result<PromptPair, PromptError> {
    require_answer(responses)?;
    let user = render(
        "semantic_fusion.user",
        &[
            ("responses", &render_responses(responses, false)),
            ("formatting", &formatting(task, false)?),
        ],
    )?;
    Ok(PromptPair {
        system: fusion_system(task)?,
        user,
        template_id: "semantic_fusion".into(),
        fill_report: vec![(
            "responses".into(),
            format!("{} modality agents", responses.len()),
        )],
    })
}

/// Aggregation anchored to the majority vote.
pub fn render_statistical_fusion(
    task: &TaskSpec,
    responses: &[AgentResponse],
    anchor: &str,
) -> Result<PromptPair, PromptError> {
    require_answer(responses)?;
    if task.class_index(anchor).is_none() {
        return Err(PromptError::AnchorNotClass(anchor.to_string()));
    }
    let user = render(
        "statistical_fusion.user",
        &[
            ("responses", &render_responses(responses, false)),
            ("anchor", anchor),
            ("formatting", &formatting(task, false)?),
        ],
    )?;
    Ok(PromptPair {
        system: fusion_system(task)?,
        user,
        template_id: "statistical_fusion".into(),
        fill_report: vec![
            (
                "responses".into(),
                format!("{} modality agents", responses.len()),
            ),
            ("anchor".into(), "majority vote".into()),
        ],
    })
}

/// Coordinator prompt over modality responses and both fusion outputs.
pub fn render_hybrid_fusion(
    task: &TaskSpec,
    responses: &[AgentResponse],
    semantic: Option<&AgentResponse>,
    statistical: Option<&AgentResponse>,
) -> Result<PromptPair, PromptError> {
    let semantic = semantic.ok_or(PromptError::MissingFusion("semantic"))?;
    let statistical = statistical.ok_or(PromptError::MissingFusion("statistical"))?;
    let td = task_description(task, None)?;
    let system = render("hybrid_fusion.system", &[("task_description", &td)])?;
    let user = render(
        "hybrid_fusion.user",
        &[
            ("responses", &render_responses(responses, false)),
            (
                "semantic",
                &format!(
                    "Semantic fusion agent: {}",
                    response_object(semantic, false)
                ),
            ),
            (
                "statistical",
                &format!(
                    "Statistical fusion agent: {}",
                    response_object(statistical, false)
                ),
            ),
            ("formatting", &formatting(task, false)?),
        ],
    )?;
    Ok(PromptPair {
        system,
        user,
        template_id: "hybrid_fusion".into(),
        fill_report: vec![
            (
                "responses".into(),
                format!("{} modality agents", responses.len()),
            ),
            ("semantic".into(), "semantic fusion response".into()),
            ("statistical".into(), "statistical fusion response".into()),
        ],
    })
}

/// Follow-up turn of one debate round. The agent's own conversation so far
/// carries its sample and previous answer; this turn adds its peers'
/// previous responses.
pub fn debate_round_turn(
    task: &TaskSpec,
    peers: &[AgentResponse],
    opts: RenderOptions,
) -> Result<String, PromptError> {
    render(
        "debate_round.user",
        &[
            ("peers", &render_responses(peers, opts.confidence)),
            ("formatting", &formatting(task, opts.confidence)?),
        ],
    )
}

/// Answer counts per class, in class order.
pub fn render_counts(task: &TaskSpec, responses: &[AgentResponse]) -> String {
    let parts: Vec<String> = task
        .classes
        .iter()
        .map(|c| {
            let n = responses
                .iter()
                .filter(|r| r.prediction.label() == Some(c.as_str()))
                .count();
            format!("{}: {n}", json_str(c))
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// Follow-up turn of one CMD round: full responses from the agent's group,
/// answer counts only from the other groups.
pub fn cmd_round_turn(
    task: &TaskSpec,
    group_peers: &[AgentResponse],
    out_group: &[AgentResponse],
) -> Result<String, PromptError> {
    render(
        "cmd_round.user",
        &[
            ("peers", &render_responses(group_peers, false)),
            ("counts", &render_counts(task, out_group)),
            ("formatting", &formatting(task, false)?),
        ],
    )
}

/// Follow-up turn asking for feedback on the previous answer.
pub fn refine_feedback_turn() -> String {
    template("refine_feedback.user").to_string()
}

/// Follow-up turn asking for a revised answer.
pub fn refine_revise_turn(task: &TaskSpec) -> Result<String, PromptError> {
    render(
        "refine_revise.user",
        &[
            ("classes", &class_list(task)),
            ("formatting", &formatting(task, false)?),
        ],
    )
}

/// Corrective line appended to the user prompt on the one parse retry.
pub fn retry_line() -> &'static str {
    template("retry")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedReply {
    pub reason: String,
    pub answer: String,
    pub confidence: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseFailure {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("answer `{0}` is not a task class")]
    OutOfSet(String),
    #[error("confidence `{0}` is not a number in [0, 1]")]
    BadConfidence(String),
}

fn unfence(raw: &str) -> Result<&str, ParseFailure> {
    let text = raw.trim();
    if text.starts_with('{') || !text.contains("```") {
        return Ok(text);
    }
    // Outermost fence pair, so backticks inside string values survive.
    let start = text.find("```").expect("fence present") + 3;
    let end = text
        .rfind("```")
        .filter(|&e| e >= start)
        .ok_or_else(|| ParseFailure::Malformed("unclosed code fence".into()))?;
    let inner = &text[start..end];
    // Drop an info string such as `json`.
    let inner = match inner.split_once('\n') {
        Some((first, rest)) if !first.trim_start().starts_with('{') => rest,
        _ => inner,
    };
    Ok(inner.trim())
}

fn key<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    name: &str,
) -> Option<&'a serde_json::Value> {
    obj.get(name).or_else(|| {
        obj.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    })
}

/// Parses a strict-JSON reply: a bare object, or one fenced code block.
pub fn parse_reply(
    raw: &str,
    task: &TaskSpec,
    expect_confidence: bool,
) -> Result<ParsedReply, ParseFailure> {
    let body = unfence(raw)?;
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ParseFailure::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ParseFailure::Malformed("top-level value is not an object".into()))?;
    let reason = match key(obj, "REASON").ok_or(ParseFailure::MissingKey("REASON"))? {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let answer_raw = match key(obj, "ANSWER").ok_or(ParseFailure::MissingKey("ANSWER"))? {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let answer = task
        .match_label(&answer_raw)
        .ok_or_else(|| ParseFailure::OutOfSet(answer_raw.clone()))?
        .to_string();
    let confidence = if expect_confidence {
        let v = key(obj, "CONFIDENCE").ok_or(ParseFailure::MissingKey("CONFIDENCE"))?;
        let c = match v {
            serde_json::Value::Number(n) => n.as_f64(),
            serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
            _ => None,
        };
        match c {
            Some(c) if (0.0..=1.0).contains(&c) => Some(c),
            _ => return Err(ParseFailure::BadConfidence(v.to_string())),
        }
    } else {
        None
    };
    Ok(ParsedReply {
        reason,
        answer,
        confidence,
    })
}

/// Map of template id to raw text, for dumps.
pub fn template_texts() -> BTreeMap<&'static str, &'static str> {
    TEMPLATES
        .iter()
        .map(|(id, _)| (*id, template(id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModalityMeta, Phase, TokenUsage};

    fn task() -> TaskSpec {
        let meta = |s: &str| ModalityMeta {
            sensor_type: s.into(),
            collection_protocol: format!("{s} protocol"),
            feature_extraction: format!("{s} features"),
            sample_rate_hz: 100.0,
        };
        TaskSpec {
            description: "Classify the sleep stage.".into(),
            classes: vec!["W".into(), "N1".into(), "REM".into()],
            class_descriptions: BTreeMap::new(),
            modality_meta: BTreeMap::from([
                ("ECG".into(), meta("ECG")),
                ("EEG".into(), meta("EEG")),
            ]),
        }
    }

    fn fv(names: &[&str]) -> FeatureVector {
        let mut f = FeatureVector::new();
        for (i, n) in names.iter().enumerate() {
            f.push(*n, if i == 0 { None } else { Some(i as f64 * 1.5) }, "u");
        }
        f
    }

    fn window() -> WindowFeatures {
        BTreeMap::from([
            ("ECG".to_string(), fv(&["rmssd", "hr_mean"])),
            ("EEG".to_string(), fv(&["alpha_power", "delta_power"])),
        ])
    }

    fn examples() -> ClassExamples {
        task()
            .classes
            .iter()
            .map(|c| (c.clone(), window()))
            .collect()
    }

    fn resp(id: &str, label: Option<&str>) -> AgentResponse {
        let usage = TokenUsage::zero(Phase::Interpretation);
        match label {
            Some(l) => AgentResponse {
                agent_id: id.into(),
                prediction: Prediction::Label(l.into()),
                rationale: format!("{id} says {l}"),
                confidence: None,
                usage,
                raw_text: String::new(),
            },
            None => AgentResponse::abstain(id, "junk".into(), usage),
        }
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("t", "a {{x}} b", &[("x", "{{x}}")]).unwrap();
        assert_eq!(out, "a {{x}} b");
        assert!(matches!(
            fill("t", "{{y}}", &[]),
            Err(PromptError::Unresolved { .. })
        ));
    }

    #[test]
    fn values_use_four_significant_digits() {
        assert_eq!(format_value(12.3456), "12.35");
        assert_eq!(format_value(60.0), "60");
        assert_eq!(format_value(0.00123456), "0.001235");
        assert_eq!(format_value(123456.0), "1.235e5");
        assert_eq!(format_value(-0.5), "-0.5");
        assert_eq!(format_value(9999.7), "1e4");
    }

    #[test]
    fn single_agent_contains_everything() {
        let p =
            render_single_agent(&task(), &window(), &examples(), RenderOptions::default()).unwrap();
        for s in ["ECG", "EEG", "W", "N1", "REM", "N/A"] {
            assert!(p.system.contains(s) || p.user.contains(s), "{s}");
        }
        assert!(p.user.contains("  - EEG alpha_power (u): N/A"));
        let again =
            render_single_agent(&task(), &window(), &examples(), RenderOptions::default()).unwrap();
        assert_eq!(p, again);
        let mut missing = examples();
        missing.remove("REM");
        assert_eq!(
            render_single_agent(&task(), &window(), &missing, RenderOptions::default()),
            Err(PromptError::MissingExample("REM".into()))
        );
    }

    #[test]
    fn modality_agent_is_isolated() {
        let w = window();
        let p = render_modality_agent(
            &task(),
            "ECG",
            &w["ECG"],
            &examples(),
            RenderOptions::default(),
        )
        .unwrap();
        let text = format!("{}{}", p.system, p.user);
        assert!(!text.contains("alpha_power") && !text.contains("EEG"));
        let single =
            render_single_agent(&task(), &w, &examples(), RenderOptions::default()).unwrap();
        assert!(text.len() < single.system.len() + single.user.len());
        assert!(render_modality_agent(
            &task(),
            "EMG",
            &w["ECG"],
            &examples(),
            RenderOptions::default()
        )
        .is_err());
    }

    #[test]
    fn fusion_prompts() {
        let rs = vec![resp("ECG", Some("W")), resp("EEG", None)];
        let sem = render_semantic_fusion(&task(), &rs).unwrap();
        assert!(sem.user.contains("\"EEG\": \"no valid answer\""));
        assert!(!sem.user.contains("majority"));
        let stat = render_statistical_fusion(&task(), &rs, "N1").unwrap();
        assert_eq!(
            stat.user.matches("N1").count() - sem.user.matches("N1").count(),
            3
        );
        assert_eq!(stat.system, sem.system);
        assert!(render_statistical_fusion(&task(), &rs, "X").is_err());
        let all_abstain = vec![resp("ECG", None)];
        assert_eq!(
            render_semantic_fusion(&task(), &all_abstain),
            Err(PromptError::AllAbstain)
        );

        let s = resp("semantic", Some("W"));
        let t = resp("statistical", Some("N1"));
        let hyb = render_hybrid_fusion(&task(), &rs, Some(&s), Some(&t)).unwrap();
        let si = hyb.user.find("semantic says W").unwrap();
        let ti = hyb.user.find("statistical says N1").unwrap();
        assert!(si < ti);
        assert!(render_hybrid_fusion(&task(), &rs, Some(&s), None).is_err());
    }

    #[test]
    fn parse_variants() {
        let t = task();
        let p = parse_reply(r#"{"REASON":"r","ANSWER":"REM"}"#, &t, false).unwrap();
        assert_eq!(p.answer, "REM");
        let fenced = "```json\n{\"REASON\":\"r\",\"ANSWER\":\" rem \"}\n```";
        assert_eq!(parse_reply(fenced, &t, false).unwrap().answer, "REM");
        assert!(matches!(
            parse_reply(r#"{"REASON":"r","ANSWER":"Rem Sleep"}"#, &t, false),
            Err(ParseFailure::OutOfSet(_))
        ));
        assert!(matches!(
            parse_reply("not json", &t, false),
            Err(ParseFailure::Malformed(_))
        ));
        assert_eq!(
            parse_reply(r#"{"ANSWER":"W"}"#, &t, false),
            Err(ParseFailure::MissingKey("REASON"))
        );
        assert!(matches!(
            parse_reply(r#"{"REASON":"r","ANSWER":"W","CONFIDENCE":1.5}"#, &t, true),
            Err(ParseFailure::BadConfidence(_))
        ));
        assert_eq!(
            parse_reply(
                r#"{"REASON":"r","ANSWER":"W","CONFIDENCE":"0.25"}"#,
                &t,
                true
            )
            .unwrap()
            .confidence,
            Some(0.25)
        );
    }

    #[test]
    fn rendered_response_round_trips() {
        let r = resp("ECG", Some("N1"));
        let text = response_object(&r, false);
        assert_eq!(parse_reply(&text, &task(), false).unwrap().answer, "N1");
    }
}
