//! ConSensus and the baseline protocols as orchestrations over a
//! [`ChatBackend`], plus the two voting rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest, Message, Role, Source};
use crate::model::{
    AgentResponse, ClassExamples, FusionResult, Phase, Prediction, TaskSpec, TokenUsage,
    WindowFeatures,
};
use crate::prompts::{self, ParseFailure, PromptError, PromptPair, RenderOptions};

pub const SC_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolName {
    Single,
    Sc,
    Sr,
    Debate,
    Mad,
    Cmd,
    Reconcile,
    Consensus,
    SemOnly,
    StatOnly,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 10] = [
        ProtocolName::Single,
        ProtocolName::Sc,
        ProtocolName::Sr,
        ProtocolName::Debate,
        ProtocolName::Mad,
        ProtocolName::Cmd,
        ProtocolName::Reconcile,
        ProtocolName::Consensus,
        ProtocolName::SemOnly,
        ProtocolName::StatOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolName::Single => "SINGLE",
            ProtocolName::Sc => "SC",
            ProtocolName::Sr => "SR",
            ProtocolName::Debate => "DEBATE",
            ProtocolName::Mad => "MAD",
            ProtocolName::Cmd => "CMD",
            ProtocolName::Reconcile => "RECONCILE",
            ProtocolName::Consensus => "CONSENSUS",
            ProtocolName::SemOnly => "SEM_ONLY",
            ProtocolName::StatOnly => "STAT_ONLY",
        }
    }

    /// Exchanges issued when every reply parses on the first attempt.
    pub fn expected_calls(self, config: &ProtocolConfig, n_modalities: usize) -> usize {
        let n = n_modalities;
        let r = config.rounds as usize;
        match self {
            ProtocolName::Single => 1,
            ProtocolName::Sc => config.sc_samples as usize,
            ProtocolName::Sr => 1 + 2 * config.sr_steps as usize,
            ProtocolName::Debate | ProtocolName::Cmd | ProtocolName::Reconcile => n * (1 + r),
            ProtocolName::Mad => n * (1 + r) + 1,
            ProtocolName::Consensus => n + 3,
            ProtocolName::SemOnly | ProtocolName::StatOnly => n + 1,
        }
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolName {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase().replace('-', "_");
        ProtocolName::ALL
            .into_iter()
            .find(|p| p.as_str() == wanted)
            .ok_or_else(|| ProtocolError::UnknownProtocol(s.to_string()))
    }
}

fn default_rounds() -> u32 {
    2
}
fn default_sc_samples() -> u32 {
    3
}
fn default_sr_steps() -> u32 {
    2
}
fn default_cmd_groups() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub name: ProtocolName,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_sc_samples")]
    pub sc_samples: u32,
    #[serde(default = "default_sr_steps")]
    pub sr_steps: u32,
    #[serde(default = "default_cmd_groups")]
    pub cmd_groups: u32,
    #[serde(default)]
    pub seed: u64,
    /// Peer rationales in round prompts are cut to this many characters.
    #[serde(default)]
    pub char_budget: Option<usize>,
}

impl ProtocolConfig {
    pub fn new(name: ProtocolName) -> Self {
        ProtocolConfig {
            name,
            rounds: default_rounds(),
            sc_samples: default_sc_samples(),
            sr_steps: default_sr_steps(),
            cmd_groups: default_cmd_groups(),
            seed: 0,
            char_budget: None,
        }
    }

    pub fn with_rounds(mut self, rounds: u32) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn check(&self) -> Result<(), ProtocolError> {
        if self.name == ProtocolName::Sc && self.sc_samples < 2 {
            return Err(ProtocolError::Config(
                "sc_samples must be at least 2".into(),
            ));
        }
        if self.name == ProtocolName::Cmd && self.cmd_groups < 1 {
            return Err(ProtocolError::Config(
                "cmd_groups must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("protocol config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("window has no modality features")]
    NoModalities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Single,
    Modality,
    Semantic,
    Statistical,
    Hybrid,
    Judge,
    Feedback,
    Refine,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Single => "single",
            AgentRole::Modality => "modality",
            AgentRole::Semantic => "semantic",
            AgentRole::Statistical => "statistical",
            AgentRole::Hybrid => "hybrid",
            AgentRole::Judge => "judge",
            AgentRole::Feedback => "feedback",
            AgentRole::Refine => "refine",
        }
    }
}

/// One request/response pair as stored in run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeLog {
    pub role: AgentRole,
    pub agent_id: String,
    pub round: u32,
    /// 0 for the first attempt, 1 for the parse retry.
    pub attempt: u32,
    pub phase: Phase,
    pub template_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub response_text: String,
    pub usage: TokenUsage,
    pub source: Source,
    pub cache_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

/// Everything a protocol needs about one window.
#[derive(Clone, Copy)]
pub struct WindowContext<'a> {
    pub task: &'a TaskSpec,
    pub features: &'a WindowFeatures,
    pub examples: &'a ClassExamples,
    pub backend: &'a dyn ChatBackend,
    pub model: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub prediction: Prediction,
    pub valid: bool,
    /// Final modality-agent responses (after any rounds).
    pub per_modality: Vec<AgentResponse>,
    pub vote_anchor: Option<String>,
    pub fusion: Option<FusionResult>,
    pub exchanges: Vec<ExchangeLog>,
    pub flags: Vec<String>,
}

impl ProtocolRun {
    pub fn usage(&self, phase: Phase) -> TokenUsage {
        let mut u = TokenUsage::zero(phase);
        for e in self.exchanges.iter().filter(|e| e.phase == phase) {
            u.accumulate(&e.usage);
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub label: String,
    /// More than one class reached the winning score.
    pub tie: bool,
}

/// Plurality over non-ABSTAIN predictions; ties go to the earliest class.
pub fn majority_vote(responses: &[AgentResponse], classes: &[String]) -> Option<Vote> {
    let preds: Vec<&Prediction> = responses.iter().map(|r| &r.prediction).collect();
    vote_counts(&preds, classes)
}

fn vote_counts(preds: &[&Prediction], classes: &[String]) -> Option<Vote> {
    let mut counts = vec![0usize; classes.len()];
    for p in preds {
        if let Some(i) = p.label().and_then(|l| classes.iter().position(|c| c == l)) {
            counts[i] += 1;
        }
    }
    argmax_first(&counts)
        .filter(|&(_, best)| best > 0)
        .map(|(i, best)| Vote {
            label: classes[i].clone(),
            tie: counts.iter().filter(|&&c| c == best).count() > 1,
        })
}

fn argmax_first<T: PartialOrd + Copy>(xs: &[T]) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best
}

const WEIGHT_SCALE: f64 = 1e9;

/// Confidence-weighted vote. Weights are summed in fixed point so that the
/// result does not depend on agent order. ABSTAIN and missing confidences
/// weigh nothing; if no weight is cast at all the plain majority applies.
pub fn weighted_vote(responses: &[AgentResponse], classes: &[String]) -> Option<Vote> {
    let mut sums = vec![0u64; classes.len()];
    for r in responses {
        if let (Some(l), Some(c)) = (r.prediction.label(), r.confidence) {
            if let Some(i) = classes.iter().position(|x| x == l) {
                sums[i] += (c.clamp(0.0, 1.0) * WEIGHT_SCALE).round() as u64;
            }
        }
    }
    match argmax_first(&sums) {
        Some((i, best)) if best > 0 => Some(Vote {
            label: classes[i].clone(),
            tie: sums.iter().filter(|&&s| s == best).count() > 1,
        }),
        _ => majority_vote(responses, classes),
    }
}

struct Session<'a> {
    ctx: WindowContext<'a>,
    exchanges: Vec<ExchangeLog>,
    flags: Vec<String>,
}

struct Ask<'p> {
    role: AgentRole,
    agent_id: &'p str,
    round: u32,
    phase: Phase,
    template_id: &'p str,
    temperature: f64,
    seed_hint: Option<u64>,
    confidence: bool,
}

impl<'p> Ask<'p> {
    fn new(role: AgentRole, agent_id: &'p str, phase: Phase, template_id: &'p str) -> Self {
        Ask {
            role,
            agent_id,
            round: 0,
            phase,
            template_id,
            temperature: 0.0,
            seed_hint: None,
            confidence: false,
        }
    }

    fn round(mut self, r: u32) -> Self {
        self.round = r;
        self
    }
}

impl<'a> Session<'a> {
    fn new(ctx: WindowContext<'a>) -> Self {
        Session {
            ctx,
            exchanges: Vec::new(),
            flags: Vec::new(),
        }
    }

    fn flag(&mut self, f: impl Into<String>) {
        self.flags.push(f.into());
    }

    fn send(
        &mut self,
        ask: &Ask<'_>,
        messages: Vec<Message>,
    ) -> Result<(String, TokenUsage), ProtocolError> {
        let request = ChatRequest {
            model: self.ctx.model.to_string(),
            messages,
            temperature: ask.temperature,
            seed_hint: ask.seed_hint,
            tag: ask.phase,
        };
        let ex = self.ctx.backend.complete(&request)?;
        let attempt = self
            .exchanges
            .last()
            .filter(|e| {
                e.agent_id == ask.agent_id
                    && e.role == ask.role
                    && e.round == ask.round
                    && e.parse_error.is_some()
            })
            .map_or(0, |e| e.attempt + 1);
        self.exchanges.push(ExchangeLog {
            role: ask.role,
            agent_id: ask.agent_id.to_string(),
            round: ask.round,
            attempt,
            phase: ask.phase,
            template_id: ask.template_id.to_string(),
            messages: ex.request.messages,
            temperature: ask.temperature,
            response_text: ex.response_text.clone(),
            usage: ex.usage,
            source: ex.source,
            cache_key: ex.cache_key,
            parse_error: None,
        });
        Ok((ex.response_text, ex.usage))
    }

    /// Sends, parses, retries once with a corrective line, then abstains.
    fn ask(
        &mut self,
        ask: Ask<'_>,
        messages: Vec<Message>,
    ) -> Result<AgentResponse, ProtocolError> {
        let mut usage = TokenUsage::zero(ask.phase);
        let mut messages = messages;
        let mut last_text = String::new();
        for attempt in 0..2 {
            if attempt == 1 {
                let last = messages.last_mut().expect("non-empty conversation");
                last.content = format!("{}\n{}", last.content, prompts::retry_line());
            }
            let (text, u) = self.send(&ask, messages.clone())?;
            usage.accumulate(&u);
            match prompts::parse_reply(&text, self.ctx.task, ask.confidence) {
                Ok(p) => {
                    return Ok(AgentResponse {
                        agent_id: ask.agent_id.to_string(),
                        prediction: Prediction::Label(p.answer),
                        rationale: p.reason,
                        confidence: p.confidence,
                        usage,
                        raw_text: text,
                    })
                }
                Err(e) => {
                    self.exchanges.last_mut().expect("just sent").parse_error =
                        Some(failure_kind(&e));
                    last_text = text;
                }
            }
        }
        self.flag(format!("abstain:{}", ask.agent_id));
        Ok(AgentResponse::abstain(ask.agent_id, last_text, usage))
    }

    fn ask_pair(&mut self, ask: Ask<'_>, pair: PromptPair) -> Result<AgentResponse, ProtocolError> {
        let messages = vec![
            Message::new(Role::System, pair.system),
            Message::new(Role::User, pair.user),
        ];
        self.ask(ask, messages)
    }

    fn modalities(&self) -> Result<Vec<String>, ProtocolError> {
        let ids: Vec<String> = self.ctx.features.keys().cloned().collect();
        if ids.is_empty() {
            Err(ProtocolError::NoModalities)
        } else {
            Ok(ids)
        }
    }

    /// First-round modality agents. Returns each agent's response and its
    /// conversation so far, which later rounds extend.
    fn modality_agents(
        &mut self,
        confidence: bool,
    ) -> Result<(Vec<AgentResponse>, Vec<Vec<Message>>), ProtocolError> {
        let mut responses = Vec::new();
        let mut histories = Vec::new();
        for id in self.modalities()? {
            let fv = &self.ctx.features[&id];
            let pair = prompts::render_modality_agent(
                self.ctx.task,
                &id,
                fv,
                self.ctx.examples,
                RenderOptions { confidence },
            )?;
            let mut ask = Ask::new(
                AgentRole::Modality,
                &id,
                Phase::Interpretation,
                "modality_agent",
            );
            ask.confidence = confidence;
            let messages = vec![
                Message::new(Role::System, pair.system),
                Message::new(Role::User, pair.user),
            ];
            let r = self.ask(ask, messages.clone())?;
            histories.push(messages);
            responses.push(r);
        }
        Ok((responses, histories))
    }

    fn vote(&mut self, responses: &[AgentResponse], weighted: bool) -> Option<String> {
        let classes = &self.ctx.task.classes;
        let v = if weighted {
            weighted_vote(responses, classes)
        } else {
            majority_vote(responses, classes)
        }?;
        if v.tie {
            log::info!("vote tie broken by class order in favour of {}", v.label);
            self.flag(format!("tie-break:{}", v.label));
        }
        Some(v.label)
    }

    fn budget(&self, r: &AgentResponse, budget: Option<usize>) -> AgentResponse {
        let mut r = r.clone();
        if let Some(b) = budget {
            if r.rationale.chars().count() > b {
                r.rationale = r.rationale.chars().take(b).collect();
            }
        }
        r
    }

    /// Debate-style rounds. Each agent continues its own conversation with
    /// one extra turn per round; `confidence` selects the ReConcile schema.
    fn debate_rounds(
        &mut self,
        (current, histories): (Vec<AgentResponse>, Vec<Vec<Message>>),
        config: &ProtocolConfig,
        confidence: bool,
    ) -> Result<Vec<AgentResponse>, ProtocolError> {
        self.rounds(
            current,
            histories,
            config,
            "debate_round",
            |s, i, prev| {
                let peers: Vec<AgentResponse> = prev
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, p)| s.budget(p, config.char_budget))
                    .collect();
                Ok(prompts::debate_round_turn(
                    s.ctx.task,
                    &peers,
                    RenderOptions { confidence },
                )?)
            },
            confidence,
        )
    }

    /// CMD rounds: agents are split round-robin into groups; full responses
    /// flow within a group, answer counts across groups.
    fn cmd_rounds(
        &mut self,
        (current, histories): (Vec<AgentResponse>, Vec<Vec<Message>>),
        config: &ProtocolConfig,
    ) -> Result<Vec<AgentResponse>, ProtocolError> {
        let groups = config.cmd_groups.max(1) as usize;
        self.rounds(
            current,
            histories,
            config,
            "cmd_round",
            |s, i, prev| {
                let in_group: Vec<AgentResponse> = prev
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i && j % groups == i % groups)
                    .map(|(_, p)| s.budget(p, config.char_budget))
                    .collect();
                let out_group: Vec<AgentResponse> = prev
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j % groups != i % groups)
                    .map(|(_, p)| p.clone())
                    .collect();
                Ok(prompts::cmd_round_turn(s.ctx.task, &in_group, &out_group)?)
            },
            false,
        )
    }

    fn rounds(
        &mut self,
        mut current: Vec<AgentResponse>,
        mut histories: Vec<Vec<Message>>,
        config: &ProtocolConfig,
        template_id: &str,
        turn: impl Fn(&Self, usize, &[AgentResponse]) -> Result<String, ProtocolError>,
        confidence: bool,
    ) -> Result<Vec<AgentResponse>, ProtocolError> {
        for round in 1..=config.rounds {
            // Every agent sees only the previous round's responses.
            let prev = current.clone();
            current = Vec::with_capacity(prev.len());
            for (i, own) in prev.iter().enumerate() {
                let text = turn(self, i, &prev)?;
                let history = &mut histories[i];
                history.push(Message::new(Role::Assistant, own.raw_text.clone()));
                history.push(Message::new(Role::User, text));
                let mut ask = Ask::new(
                    AgentRole::Modality,
                    &own.agent_id,
                    Phase::Aggregation,
                    template_id,
                )
                .round(round);
                ask.confidence = confidence;
                current.push(self.ask(ask, history.clone())?);
            }
        }
        Ok(current)
    }

    fn finish(
        self,
        prediction: Prediction,
        per_modality: Vec<AgentResponse>,
        anchor: Option<String>,
        fusion: Option<FusionResult>,
    ) -> ProtocolRun {
        ProtocolRun {
            valid: !prediction.is_abstain(),
            prediction,
            per_modality,
            vote_anchor: anchor,
            fusion,
            exchanges: self.exchanges,
            flags: self.flags,
        }
    }
}

fn failure_kind(e: &ParseFailure) -> String {
    match e {
        ParseFailure::Malformed(m) => format!("malformed: {m}"),
        ParseFailure::MissingKey(k) => format!("missing-key: {k}"),
        ParseFailure::OutOfSet(a) => format!("out-of-set: {a}"),
        ParseFailure::BadConfidence(c) => format!("bad-confidence: {c}"),
    }
}

fn label_or_abstain(label: Option<String>) -> Prediction {
    label.map_or(Prediction::Abstain, Prediction::Label)
}

/// Runs the configured protocol on one window.
pub fn run_protocol(
    ctx: WindowContext<'_>,
    config: &ProtocolConfig,
) -> Result<ProtocolRun, ProtocolError> {
    config.check()?;
    let mut s = Session::new(ctx);
    let task = ctx.task;
    match config.name {
        ProtocolName::Single => {
            let pair = prompts::render_single_agent(
                task,
                ctx.features,
                ctx.examples,
                RenderOptions::default(),
            )?;
            let r = s.ask_pair(
                Ask::new(
                    AgentRole::Single,
                    "single",
                    Phase::Interpretation,
                    "single_agent",
                ),
                pair,
            )?;
            Ok(s.finish(r.prediction, Vec::new(), None, None))
        }
        ProtocolName::Sc => {
            let pair = prompts::render_single_agent(
                task,
                ctx.features,
                ctx.examples,
                RenderOptions::default(),
            )?;
            let mut samples = Vec::new();
            for k in 0..config.sc_samples {
                let id = format!("sample-{k}");
                let mut ask = Ask::new(
                    AgentRole::Single,
                    &id,
                    Phase::Interpretation,
                    "single_agent",
                );
                ask.temperature = SC_TEMPERATURE;
                ask.seed_hint = Some(k as u64);
                samples.push(s.ask_pair(ask, pair.clone())?);
            }
            let label = s.vote(&samples, false);
            Ok(s.finish(label_or_abstain(label), Vec::new(), None, None))
        }
        ProtocolName::Sr => run_self_refine(s, config),
        ProtocolName::Debate => {
            let initial = s.modality_agents(false)?;
            let last = s.debate_rounds(initial, config, false)?;
            let label = s.vote(&last, false);
            Ok(s.finish(label_or_abstain(label.clone()), last, label, None))
        }
        ProtocolName::Cmd => {
            let initial = s.modality_agents(false)?;
            let last = s.cmd_rounds(initial, config)?;
            let label = s.vote(&last, false);
            Ok(s.finish(label_or_abstain(label.clone()), last, label, None))
        }
        ProtocolName::Reconcile => {
            let initial = s.modality_agents(true)?;
            let last = s.debate_rounds(initial, config, true)?;
            let label = s.vote(&last, true);
            Ok(s.finish(label_or_abstain(label.clone()), last, label, None))
        }
        ProtocolName::Mad => {
            let initial = s.modality_agents(false)?;
            let last = s.debate_rounds(initial, config, false)?;
            let anchor = s.vote(&last, false);
            if anchor.is_none() {
                s.flag("all-abstain");
                return Ok(s.finish(Prediction::Abstain, last, None, None));
            }
            let pair = prompts::render_semantic_fusion(task, &last)?;
            let judge = s.ask_pair(
                Ask::new(
                    AgentRole::Judge,
                    "judge",
                    Phase::Aggregation,
                    "semantic_fusion",
                )
                .round(config.rounds + 1),
                pair,
            )?;
            Ok(s.finish(judge.prediction, last, anchor, None))
        }
        ProtocolName::Consensus | ProtocolName::SemOnly | ProtocolName::StatOnly => {
            run_fusion(s, config.name)
        }
    }
}

fn run_self_refine(
    mut s: Session<'_>,
    config: &ProtocolConfig,
) -> Result<ProtocolRun, ProtocolError> {
    let task = s.ctx.task;
    let pair = prompts::render_single_agent(
        task,
        s.ctx.features,
        s.ctx.examples,
        RenderOptions::default(),
    )?;
    let mut messages = vec![
        Message::new(Role::System, pair.system),
        Message::new(Role::User, pair.user),
    ];
    let first = s.ask(
        Ask::new(
            AgentRole::Single,
            "single",
            Phase::Interpretation,
            "single_agent",
        ),
        messages.clone(),
    )?;
    let mut best = first.prediction.clone();
    let mut last_text = first.raw_text;
    for step in 1..=config.sr_steps {
        messages.push(Message::new(Role::Assistant, last_text.clone()));
        messages.push(Message::new(Role::User, prompts::refine_feedback_turn()));
        let fb = Ask::new(
            AgentRole::Feedback,
            "feedback",
            Phase::Aggregation,
            "refine_feedback",
        )
        .round(step);
        let (feedback, _) = s.send(&fb, messages.clone())?;
        messages.push(Message::new(Role::Assistant, feedback));
        messages.push(Message::new(Role::User, prompts::refine_revise_turn(task)?));
        let revise = Ask::new(
            AgentRole::Refine,
            "refine",
            Phase::Aggregation,
            "refine_revise",
        )
        .round(step);
        let r = s.ask(revise, messages.clone())?;
        if r.prediction.is_abstain() {
            s.flag(format!("refine-parse-failure:{step}"));
        } else {
            best = r.prediction.clone();
        }
        last_text = r.raw_text;
    }
    Ok(s.finish(best, Vec::new(), None, None))
}

fn run_fusion(mut s: Session<'_>, name: ProtocolName) -> Result<ProtocolRun, ProtocolError> {
    let task = s.ctx.task;
    let (responses, _) = s.modality_agents(false)?;
    let Some(anchor) = s.vote(&responses, false) else {
        s.flag("all-abstain");
        return Ok(s.finish(Prediction::Abstain, responses, None, None));
    };
    let mut fusion = FusionResult {
        per_modality: responses.clone(),
        vote_anchor: anchor.clone(),
        semantic: None,
        statistical: None,
        hybrid: None,
    };
    if name != ProtocolName::StatOnly {
        let pair = prompts::render_semantic_fusion(task, &responses)?;
        let sem = s.ask_pair(
            Ask::new(
                AgentRole::Semantic,
                "semantic",
                Phase::Aggregation,
                "semantic_fusion",
            ),
            pair,
        )?;
        fusion.semantic = Some(sem);
    }
    if name != ProtocolName::SemOnly {
        let pair = prompts::render_statistical_fusion(task, &responses, &anchor)?;
        let stat = s.ask_pair(
            Ask::new(
                AgentRole::Statistical,
                "statistical",
                Phase::Aggregation,
                "statistical_fusion",
            ),
            pair,
        )?;
        match stat.prediction.label() {
            Some(l) if l != anchor => {
                log::warn!("statistical fusion answered {l} against anchor {anchor}");
                s.flag("anchor-defied");
            }
            None if name == ProtocolName::StatOnly => s.flag("statistical-parse-failure"),
            _ => {}
        }
        fusion.statistical = Some(stat);
    }
    let prediction = match name {
        ProtocolName::SemOnly => fusion
            .semantic
            .as_ref()
            .expect("semantic ran")
            .prediction
            .clone(),
        ProtocolName::StatOnly => Prediction::Label(anchor.clone()),
        _ => {
            let pair = prompts::render_hybrid_fusion(
                task,
                &responses,
                fusion.semantic.as_ref(),
                fusion.statistical.as_ref(),
            )?;
            let hyb = s.ask_pair(
                Ask::new(
                    AgentRole::Hybrid,
                    "hybrid",
                    Phase::Aggregation,
                    "hybrid_fusion",
                ),
                pair,
            )?;
            let branch = |r: &Option<AgentResponse>| {
                r.as_ref()
                    .and_then(|r| r.prediction.label().map(str::to_string))
            };
            if let Some(l) = hyb.prediction.label() {
                if branch(&fusion.semantic).as_deref() != Some(l)
                    && branch(&fusion.statistical).as_deref() != Some(l)
                {
                    s.flag("third-answer");
                }
            }
            let p = hyb.prediction.clone();
            fusion.hybrid = Some(hyb);
            p
        }
    };
    Ok(s.finish(prediction, responses, Some(anchor), Some(fusion)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::model::{FeatureVector, ModalityMeta};
    use std::collections::BTreeMap;

    fn classes(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn vote_of(labels: &[Option<&str>]) -> Vec<AgentResponse> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| AgentResponse {
                agent_id: format!("a{i}"),
                prediction: l.map_or(Prediction::Abstain, |s| Prediction::Label(s.into())),
                rationale: String::new(),
                confidence: None,
                usage: TokenUsage::zero(Phase::Interpretation),
                raw_text: String::new(),
            })
            .collect()
    }

    #[test]
    fn majority_rules() {
        let c = classes(&["A", "B"]);
        assert_eq!(
            majority_vote(&vote_of(&[Some("A"), Some("A"), Some("B")]), &c)
                .unwrap()
                .label,
            "A"
        );
        let v = majority_vote(&vote_of(&[Some("B"), Some("A")]), &c).unwrap();
        assert_eq!((v.label.as_str(), v.tie), ("A", true));
        assert_eq!(
            majority_vote(&vote_of(&[None, Some("B")]), &c)
                .unwrap()
                .label,
            "B"
        );
        assert!(majority_vote(&vote_of(&[None]), &c).is_none());
    }

    #[test]
    fn weighted_rules() {
        let c = classes(&["A", "B"]);
        let mut rs = vote_of(&[Some("A"), Some("B"), Some("B")]);
        for (r, w) in rs.iter_mut().zip([0.9, 0.4, 0.4]) {
            r.confidence = Some(w);
        }
        assert_eq!(weighted_vote(&rs, &c).unwrap().label, "A");
        for r in &mut rs {
            r.confidence = Some(0.5);
        }
        assert_eq!(weighted_vote(&rs, &c).unwrap().label, "B");
    }

    #[test]
    fn protocol_names_parse() {
        assert_eq!(
            "sem-only".parse::<ProtocolName>().unwrap(),
            ProtocolName::SemOnly
        );
        assert_eq!(
            "CONSENSUS".parse::<ProtocolName>().unwrap(),
            ProtocolName::Consensus
        );
        assert!("nope".parse::<ProtocolName>().is_err());
    }

    fn setup() -> (TaskSpec, WindowFeatures, ClassExamples) {
        let meta = ModalityMeta {
            sensor_type: "ACC".into(),
            collection_protocol: "wrist".into(),
            feature_extraction: "stats".into(),
            sample_rate_hz: 10.0,
        };
        let task = TaskSpec {
            description: "Activity".into(),
            classes: classes(&["A", "B", "C"]),
            class_descriptions: BTreeMap::new(),
            modality_meta: ["M1", "M2", "M3"]
                .iter()
                .map(|m| (m.to_string(), meta.clone()))
                .collect(),
        };
        let mut fv = FeatureVector::new();
        fv.push("mean", Some(1.0), "g");
        let wf: WindowFeatures = task
            .modality_meta
            .keys()
            .map(|k| (k.clone(), fv.clone()))
            .collect();
        let ex = task
            .classes
            .iter()
            .map(|c| (c.clone(), wf.clone()))
            .collect();
        (task, wf, ex)
    }

    fn reply(a: &str) -> String {
        format!("{{\"REASON\": \"because\", \"ANSWER\": \"{a}\", \"CONFIDENCE\": 0.5}}")
    }

    #[test]
    fn consensus_pipeline() {
        let (task, wf, ex) = setup();
        let backend = ScriptedBackend::from_fn(|r| {
            let t = r.prompt_text();
            Some(if t.contains("coordinator") {
                reply("C")
            } else if t.contains("You are on the side") {
                reply("A")
            } else if t.contains("Using your own knowledge") || t.contains("You are M3 agent") {
                reply("B")
            } else {
                reply("A")
            })
        });
        let ctx = WindowContext {
            task: &task,
            features: &wf,
            examples: &ex,
            backend: &backend,
            model: "m",
        };
        let run = run_protocol(ctx, &ProtocolConfig::new(ProtocolName::Consensus)).unwrap();
        assert_eq!(run.exchanges.len(), 6);
        assert_eq!(
            run.exchanges
                .iter()
                .filter(|e| e.phase == Phase::Aggregation)
                .count(),
            3
        );
        assert_eq!(run.vote_anchor.as_deref(), Some("A"));
        assert_eq!(run.prediction, Prediction::Label("C".into()));
        assert!(run.flags.contains(&"third-answer".to_string()));
        let stat = run_protocol(ctx, &ProtocolConfig::new(ProtocolName::StatOnly)).unwrap();
        assert_eq!(stat.prediction, Prediction::Label("A".into()));
        assert_eq!(stat.exchanges.len(), 4);
    }

    #[test]
    fn malformed_reply_retries_then_abstains() {
        let (task, wf, ex) = setup();
        let backend = ScriptedBackend::from_fn(|r| {
            Some(if r.prompt_text().contains("You are M2 agent") {
                "oops".into()
            } else {
                reply("B")
            })
        });
        let ctx = WindowContext {
            task: &task,
            features: &wf,
            examples: &ex,
            backend: &backend,
            model: "m",
        };
        let run = run_protocol(
            ctx,
            &ProtocolConfig::new(ProtocolName::Debate).with_rounds(0),
        )
        .unwrap();
        assert_eq!(run.exchanges.len(), 4);
        let retry = &run.exchanges[2];
        assert_eq!((retry.agent_id.as_str(), retry.attempt), ("M2", 1));
        assert!(retry.messages[1].content.ends_with(prompts::retry_line()));
        assert!(run.per_modality[1].prediction.is_abstain());
        assert_eq!(run.prediction, Prediction::Label("B".into()));
    }

    #[test]
    fn self_refine_keeps_last_valid() {
        let (task, wf, ex) = setup();
        let backend = ScriptedBackend::from_fn(|r| {
            let turns = r.messages.len();
            Some(match turns {
                _ if r.messages.last().unwrap().content.starts_with("Review") => {
                    "looks fine".into()
                }
                2 => reply("A"),
                6 => reply("B"),
                _ => "garbage".into(),
            })
        });
        let ctx = WindowContext {
            task: &task,
            features: &wf,
            examples: &ex,
            backend: &backend,
            model: "m",
        };
        let run = run_protocol(ctx, &ProtocolConfig::new(ProtocolName::Sr)).unwrap();
        assert_eq!(run.prediction, Prediction::Label("B".into()));
        assert!(run
            .flags
            .iter()
            .any(|f| f.starts_with("refine-parse-failure")));
    }
}
