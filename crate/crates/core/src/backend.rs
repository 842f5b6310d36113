//! Chat-completion backends: scripted replies for hermetic runs, a
//! content-addressed disk cache, and a live OpenAI-compatible client.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Phase, TokenUsage};

/// Number of HTTP requests issued by live backends in this process.
static LIVE_REQUESTS: AtomicU64 = AtomicU64::new(0);

pub fn live_request_count() -> u64 {
    LIVE_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default)]
    pub seed_hint: Option<u64>,
    pub tag: Phase,
}

impl ChatRequest {
    pub fn new(
        model: impl Into<String>,
        system: impl Into<String>,
        user: impl Into<String>,
        tag: Phase,
    ) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![
                Message::new(Role::System, system),
                Message::new(Role::User, user),
            ],
            temperature: 0.0,
            seed_hint: None,
            tag,
        }
    }

    /// Sorted-key JSON with message content kept verbatim.
    pub fn canonical(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// All message contents joined by newlines; what scripted matchers see.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn check(&self) -> Result<(), BackendError> {
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return Err(BackendError::InvalidRequest(
                "first message must be the system prompt".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Live,
    Cache,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response_text: String,
    pub usage: TokenUsage,
    pub cache_key: String,
    pub source: Source,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no scripted reply matches request starting {0:?}")]
    ScriptedMiss(String),
    #[error("{tag:?} request failed after retries: {message}")]
    Network { tag: Phase, message: String },
    #[error("HTTP {status} from provider: {body}")]
    Http { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("script: {0}")]
    Script(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
        (**self).complete(request)
    }
}

/// Fallback token estimate. Letter runs cost one token per four characters,
/// digit runs one per three, every other non-space character one; whitespace
/// is free. Rounded up per run.
pub fn estimate_tokens(text: &str) -> u64 {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Letter,
        Digit,
        Space,
        Symbol,
    }
    let class = |c: char| {
        if c.is_alphabetic() {
            Class::Letter
        } else if c.is_numeric() {
            Class::Digit
        } else if c.is_whitespace() {
            Class::Space
        } else {
            Class::Symbol
        }
    };
    let cost = |cls: Class, len: u64| match cls {
        Class::Letter => len.div_ceil(4),
        Class::Digit => len.div_ceil(3),
        Class::Space => 0,
        Class::Symbol => len,
    };
    let mut total = 0;
    let mut run: Option<(Class, u64)> = None;
    for c in text.chars() {
        let cls = class(c);
        run = match run {
            Some((k, n)) if k == cls => Some((k, n + 1)),
            Some((k, n)) => {
                total += cost(k, n);
                Some((cls, 1))
            }
            None => Some((cls, 1)),
        };
    }
    if let Some((k, n)) = run {
        total += cost(k, n);
    }
    total
}

fn estimated_usage(request: &ChatRequest, reply: &str) -> TokenUsage {
    TokenUsage {
        prompt_tokens: estimate_tokens(&request.prompt_text()),
        completion_tokens: estimate_tokens(reply),
        phase: request.tag,
        approximate: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Exact request digest.
    Digest(String),
    /// Substring of the joined prompt text.
    Contains(String),
    /// Every substring must occur.
    All(Vec<String>),
    /// Substring of the last message only.
    Last(String),
}

impl Matcher {
    fn matches(&self, request: &ChatRequest, text: &str) -> bool {
        match self {
            Matcher::Digest(d) => *d == request.digest(),
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::All(parts) => parts.iter().all(|p| text.contains(p.as_str())),
            Matcher::Last(s) => request
                .messages
                .last()
                .is_some_and(|m| m.content.contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    /// Reply `seed_hint % len` is returned.
    pub replies: Vec<String>,
    /// (prompt, completion) counts recorded instead of an estimate.
    #[serde(default)]
    pub usage: Option<(u64, u64)>,
}

impl ScriptRule {
    pub fn new(matcher: Matcher, reply: impl Into<String>) -> Self {
        ScriptRule {
            matcher,
            replies: vec![reply.into()],
            usage: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

type Responder = dyn Fn(&ChatRequest) -> Option<String> + Send + Sync;

/// Deterministic backend driven by rules, then an optional responder.
#[derive(Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    responder: Option<Box<Responder>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend {
            rules,
            responder: None,
        }
    }

    pub fn from_fn(f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        ScriptedBackend {
            rules: Vec::new(),
            responder: Some(Box::new(f)),
        }
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let script: Script = serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        if let Some(r) = script.rules.iter().find(|r| r.replies.is_empty()) {
            return Err(BackendError::Script(format!(
                "rule {:?} has no replies",
                r.matcher
            )));
        }
        Ok(ScriptedBackend::new(script.rules))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
        request.check()?;
        let text = request.prompt_text();
        let pick = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(request, &text));
        let (reply, usage) = match pick {
            Some(rule) if !rule.replies.is_empty() => {
                let i = request.seed_hint.unwrap_or(0) as usize % rule.replies.len();
                (rule.replies[i].clone(), rule.usage)
            }
            _ => match self.responder.as_ref().and_then(|f| f(request)) {
                Some(r) => (r, None),
                None => return Err(BackendError::ScriptedMiss(text.chars().take(80).collect())),
            },
        };
        let usage = match usage {
            Some((p, c)) => TokenUsage {
                prompt_tokens: p,
                completion_tokens: c,
                phase: request.tag,
                approximate: false,
            },
            None => estimated_usage(request, &reply),
        };
        Ok(ChatExchange {
            request: request.clone(),
            response_text: reply,
            usage,
            cache_key: request.digest(),
            source: Source::Scripted,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    canonical: String,
    response_text: String,
    usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

/// One JSON file per request digest under `root/ab/cd/`.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root
            .join(&key[..2])
            .join(&key[2..4])
            .join(format!("{key}.json"))
    }

    /// Stored reply for the request, if present and recorded for the
    /// identical canonical request.
    pub fn get(&self, request: &ChatRequest) -> Result<Option<(String, TokenUsage)>, BackendError> {
        let key = request.digest();
        let path = self.path(&key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                return Ok(None);
            }
        };
        if entry.canonical != request.canonical() {
            log::warn!("cache entry {key} was stored for a different request; ignoring");
            return Ok(None);
        }
        Ok(Some((entry.response_text, entry.usage)))
    }

    pub fn put(
        &self,
        request: &ChatRequest,
        response_text: &str,
        usage: &TokenUsage,
    ) -> Result<(), BackendError> {
        let key = request.digest();
        let path = self.path(&key);
        let dir = path.parent().expect("fan-out dir");
        let err = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(err)?;
        let entry = CacheEntry {
            canonical: request.canonical(),
            response_text: response_text.to_string(),
            usage: *usage,
        };
        let tmp = dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(err)?;
        f.write_all(
            serde_json::to_string(&entry)
                .expect("entry serializes")
                .as_bytes(),
        )
        .map_err(err)?;
        f.sync_all().map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)
    }

    fn entry_files(&self) -> Result<Vec<PathBuf>, BackendError> {
        let mut out = Vec::new();
        let io = |e: std::io::Error| BackendError::Cache(e.to_string());
        if !self.root.exists() {
            return Ok(out);
        }
        for a in fs::read_dir(&self.root).map_err(io)? {
            let a = a.map_err(io)?.path();
            if !a.is_dir() {
                continue;
            }
            for b in fs::read_dir(&a).map_err(io)? {
                let b = b.map_err(io)?.path();
                if !b.is_dir() {
                    continue;
                }
                for f in fs::read_dir(&b).map_err(io)? {
                    let f = f.map_err(io)?.path();
                    if f.extension().is_some_and(|x| x == "json") {
                        out.push(f);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn stats(&self) -> Result<CacheStats, BackendError> {
        let mut s = CacheStats::default();
        for f in self.entry_files()? {
            s.entries += 1;
            s.bytes += fs::metadata(&f).map(|m| m.len()).unwrap_or(0);
        }
        Ok(s)
    }

    /// Deletes every entry; returns how many were removed.
    pub fn purge(&self) -> Result<u64, BackendError> {
        let files = self.entry_files()?;
        for f in &files {
            fs::remove_file(f).map_err(|e| BackendError::Cache(format!("{}: {e}", f.display())))?;
        }
        Ok(files.len() as u64)
    }
}

/// Serves temperature-0 requests from a disk cache, filling it on misses.
pub struct CachedBackend<B> {
    inner: B,
    cache: DiskCache,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: DiskCache) -> Self {
        CachedBackend { inner, cache }
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
        request.check()?;
        let cacheable = request.temperature == 0.0;
        if cacheable {
            if let Some((text, usage)) = self.cache.get(request)? {
                return Ok(ChatExchange {
                    request: request.clone(),
                    response_text: text,
                    usage,
                    cache_key: request.digest(),
                    source: Source::Cache,
                });
            }
        }
        let ex = self.inner.complete(request)?;
        if cacheable {
            self.cache.put(request, &ex.response_text, &ex.usage)?;
        }
        Ok(ex)
    }
}

#[cfg(feature = "live")]
pub use live::{LiveConfig, OpenAiBackend};

#[cfg(feature = "live")]
mod live {
    use std::sync::{Condvar, Mutex};
    use std::time::{Duration, SystemTime, UNIX_EPOCH};

    use super::*;

    #[derive(Debug, Clone)]
    pub struct LiveConfig {
        /// Base URL; `/chat/completions` is appended.
        pub endpoint: String,
        pub api_key: Option<String>,
        pub max_in_flight: usize,
        pub attempts: u32,
        pub retry_base: Duration,
        pub timeout: Duration,
    }

    impl LiveConfig {
        pub fn new(endpoint: impl Into<String>) -> Self {
            LiveConfig {
                endpoint: endpoint.into(),
                api_key: None,
                max_in_flight: 4,
                attempts: 3,
                retry_base: Duration::from_secs(1),
                timeout: Duration::from_secs(300),
            }
        }
    }

    struct Gate {
        limit: usize,
        busy: Mutex<usize>,
        freed: Condvar,
    }

    impl Gate {
        fn enter(&self) -> GateGuard<'_> {
            let mut busy = self.busy.lock().expect("gate lock");
            while *busy >= self.limit {
                busy = self.freed.wait(busy).expect("gate lock");
            }
            *busy += 1;
            GateGuard(self)
        }
    }

    struct GateGuard<'a>(&'a Gate);

    impl Drop for GateGuard<'_> {
        fn drop(&mut self) {
            *self.0.busy.lock().expect("gate lock") -= 1;
            self.0.freed.notify_one();
        }
    }

    pub struct OpenAiBackend {
        client: reqwest::blocking::Client,
        config: LiveConfig,
        gate: Gate,
    }

    enum Failure {
        Retryable(BackendError),
        Fatal(BackendError),
    }

    impl OpenAiBackend {
        pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
            Ok(OpenAiBackend {
                client,
                gate: Gate {
                    limit: config.max_in_flight.max(1),
                    busy: Mutex::new(0),
                    freed: Condvar::new(),
                },
                config,
            })
        }

        fn url(&self) -> String {
            format!(
                "{}/chat/completions",
                self.config.endpoint.trim_end_matches('/')
            )
        }

        fn attempt(&self, request: &ChatRequest) -> Result<(String, TokenUsage), Failure> {
            let body = serde_json::json!({
                "model": request.model,
                "messages": request.messages,
                "temperature": request.temperature,
            });
            let mut req = self.client.post(self.url()).json(&body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            LIVE_REQUESTS.fetch_add(1, Ordering::SeqCst);
            let resp = req.send().map_err(|e| {
                Failure::Retryable(BackendError::Network {
                    tag: request.tag,
                    message: e.to_string(),
                })
            })?;
            let status = resp.status();
            let text = resp.text().map_err(|e| {
                Failure::Retryable(BackendError::Network {
                    tag: request.tag,
                    message: e.to_string(),
                })
            })?;
            if !status.is_success() {
                let err = BackendError::Http {
                    status: status.as_u16(),
                    body: text,
                };
                return Err(if status.is_server_error() || status.as_u16() == 429 {
                    Failure::Retryable(err)
                } else {
                    Failure::Fatal(err)
                });
            }
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(BackendError::BadResponse(e.to_string())))?;
            let content = value
                .pointer("/choices/0/message/content")
                .and_then(|c| c.as_str())
                .ok_or_else(|| {
                    Failure::Fatal(BackendError::BadResponse(format!(
                        "no choices[0].message.content in {text}"
                    )))
                })?
                .to_string();
            let reported = |k: &str| {
                value
                    .pointer(&format!("/usage/{k}"))
                    .and_then(|v| v.as_u64())
            };
            let usage = match (reported("prompt_tokens"), reported("completion_tokens")) {
                (Some(p), Some(c)) => TokenUsage {
                    prompt_tokens: p,
                    completion_tokens: c,
                    phase: request.tag,
                    approximate: false,
                },
                _ => estimated_usage(request, &content),
            };
            Ok((content, usage))
        }

        fn backoff(&self, attempt: u32) -> Duration {
            let base = self.config.retry_base.as_millis() as u64;
            let nanos = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.subsec_nanos() as u64);
            let jitter = nanos % (base / 2 + 1);
            Duration::from_millis(base * (1 << attempt) + jitter)
        }
    }

    impl ChatBackend for OpenAiBackend {
        fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
            request.check()?;
            let _slot = self.gate.enter();
            let attempts = self.config.attempts.max(1);
            let mut last = None;
            for k in 0..attempts {
                match self.attempt(request) {
                    Ok((text, usage)) => {
                        return Ok(ChatExchange {
                            request: request.clone(),
                            response_text: text,
                            usage,
                            cache_key: request.digest(),
                            source: Source::Live,
                        })
                    }
                    Err(Failure::Fatal(e)) => return Err(e),
                    Err(Failure::Retryable(e)) => {
                        log::warn!("attempt {} of {attempts} failed: {e}", k + 1);
                        last = Some(e);
                        if k + 1 < attempts {
                            std::thread::sleep(self.backoff(k));
                        }
                    }
                }
            }
            Err(match last.expect("at least one attempt") {
                BackendError::Network { message, .. } => BackendError::Network {
                    tag: request.tag,
                    message,
                },
                other => other,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new("m", "sys", user, Phase::Interpretation)
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        assert_eq!(req("a").digest(), req("a").digest());
        assert_ne!(req("a").digest(), req("a ").digest());
        let c = req("x").canonical();
        assert!(c.find("\"messages\"").unwrap() < c.find("\"model\"").unwrap());
    }

    #[test]
    fn estimate_scheme() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("hello world"), 4);
        assert_eq!(estimate_tokens("12.5"), 3);
        assert_eq!(estimate_tokens("{\"a\"}"), 5);
    }

    #[test]
    fn scripted_rules_and_miss() {
        let mut rule = ScriptRule::new(Matcher::Contains("ping".into()), "pong");
        rule.usage = Some((100, 20));
        let b = ScriptedBackend::new(vec![rule]);
        let ex = b.complete(&req("ping!")).unwrap();
        assert_eq!(ex.response_text, "pong");
        assert_eq!(ex.source, Source::Scripted);
        assert_eq!(
            (
                ex.usage.prompt_tokens,
                ex.usage.completion_tokens,
                ex.usage.approximate
            ),
            (100, 20, false)
        );
        let long = "q".repeat(200);
        match b.complete(&req(&long)) {
            Err(BackendError::ScriptedMiss(s)) => assert_eq!(s.chars().count(), 80),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn digest_rule_and_seed_hint() {
        let r = req("x");
        let b = ScriptedBackend::new(vec![ScriptRule {
            matcher: Matcher::Digest(r.digest()),
            replies: vec!["a".into(), "b".into()],
            usage: None,
        }]);
        assert_eq!(b.complete(&r).unwrap().response_text, "a");
        let mut r2 = r.clone();
        r2.seed_hint = Some(1);
        assert!(b.complete(&r2).is_err(), "digest covers seed hint");
        let b = ScriptedBackend::new(vec![ScriptRule {
            matcher: Matcher::Contains("x".into()),
            replies: vec!["a".into(), "b".into()],
            usage: None,
        }]);
        assert_eq!(b.complete(&r2).unwrap().response_text, "b");
    }

    #[test]
    fn system_first() {
        let mut r = req("x");
        r.messages.swap(0, 1);
        assert!(matches!(r.check(), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let inner = ScriptedBackend::from_fn(|r| Some(format!("echo {}", r.messages[1].content)));
        let b = CachedBackend::new(inner, cache.clone());
        let first = b.complete(&req("hi")).unwrap();
        let second = b.complete(&req("hi")).unwrap();
        assert_eq!(first.source, Source::Scripted);
        assert_eq!(second.source, Source::Cache);
        assert_eq!(first.response_text, second.response_text);
        assert_eq!(first.usage, second.usage);
        let mut hot = req("hi");
        hot.temperature = 0.7;
        assert_eq!(b.complete(&hot).unwrap().source, Source::Scripted);
        assert_eq!(cache.stats().unwrap().entries, 1);
        assert_eq!(cache.purge().unwrap(), 1);
        assert_eq!(cache.stats().unwrap().entries, 0);
    }

    #[test]
    fn load_script_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(
            &p,
            r#"{"rules":[{"match":{"contains":"hi"},"replies":["yo"],"usage":[5,1]},{"match":{"all":["a","b"]},"replies":["ab"]}]}"#,
        )
        .unwrap();
        let b = ScriptedBackend::load(&p).unwrap();
        assert_eq!(b.complete(&req("hi")).unwrap().response_text, "yo");
        assert_eq!(b.complete(&req("b a")).unwrap().response_text, "ab");
    }
}
