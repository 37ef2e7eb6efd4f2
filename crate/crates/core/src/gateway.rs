//! Chat-completion backends and parsing of the model's determination.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::prompt::{PromptBundle, PromptCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            _ => Err(Error::Config(format!("unknown llm backend `{s}` (expected http or mock)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the bearer token; no auth header if unset.
    pub token_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further attempt.
    pub retry_backoff_ms: u64,
    pub temperature: f64,
    /// Upper bound on concurrent requests.
    pub parallelism: usize,
    /// Label the mock answers with when no scripted response matches.
    pub mock_label: char,
    /// JSONL of `{"prompt_sha256": …, "response": …}` replayed by the mock.
    pub mock_responses: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: None,
            model: None,
            token_env: None,
            timeout_secs: 60,
            max_retries: 3,
            retry_backoff_ms: 500,
            temperature: 0.0,
            parallelism: 4,
            mock_label: 'A',
            mock_responses: None,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_secs == 0 {
            return Err(Error::Config("llm timeout must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("llm parallelism must be at least 1".into()));
        }
        if !self.mock_label.is_ascii_uppercase() {
            return Err(Error::Config(format!("mock label `{}` is not A-Z", self.mock_label)));
        }
        if self.backend == BackendKind::Http && (self.endpoint.is_none() || self.model.is_none()) {
            return Err(Error::Config("http backend requires both endpoint and model".into()));
        }
        Ok(())
    }

    /// Builds the configured backend.
    pub fn connect(&self) -> Result<Box<dyn ChatBackend>> {
        self.validate()?;
        Ok(match self.backend {
            BackendKind::Http => Box::new(HttpBackend::new(self)?),
            BackendKind::Mock => {
                let mut mock = MockBackend::always(self.mock_label);
                if let Some(path) = &self.mock_responses {
                    mock = mock.with_responses_file(path)?;
                }
                Box::new(mock)
            }
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<String>;
}

/// Hex SHA-256 of the prompt's full text, the key for scripted replies.
pub fn prompt_key(prompt: &PromptBundle) -> String {
    let digest = Sha256::digest(prompt.full_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    label: char,
    responses: HashMap<String, String>,
}

impl MockBackend {
    /// Answers every unscripted prompt with `"The correct answer is <label>."`.
    pub fn always(label: char) -> Self {
        Self {
            label,
            responses: HashMap::new(),
        }
    }

    pub fn with_response(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.responses.insert(key.into(), response.into());
        self
    }

    pub fn with_responses_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Recorded {
            prompt_sha256: String,
            response: String,
        }
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Recorded = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            self.responses.insert(rec.prompt_sha256, rec.response);
        }
        Ok(self)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String> {
        Ok(match self.responses.get(&prompt_key(prompt)) {
            Some(r) => r.clone(),
            None => format!("The correct answer is {}.", self.label),
        })
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    token: Option<String>,
    temperature: f64,
    max_retries: u32,
    backoff: Duration,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 2],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Retry(Error),
    Fail(Error),
}

impl HttpBackend {
    pub fn new(config: &GatewayConfig) -> Result<Self> {
        let (Some(endpoint), Some(model)) = (&config.endpoint, &config.model) else {
            return Err(Error::Config("http backend requires both endpoint and model".into()));
        };
        let token = match &config.token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("auth token variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.clone(),
            model: model.clone(),
            token,
            temperature: config.temperature,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.retry_backoff_ms),
        })
    }

    fn attempt(&self, request: &ChatRequest<'_>) -> std::result::Result<String, Attempt> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| Attempt::Retry(Error::Transport(e.to_string())))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| Attempt::Retry(Error::Transport(e.to_string())))?;
        if !status.is_success() {
            let err = Error::Protocol {
                status: status.as_u16(),
                body,
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| Attempt::Fail(Error::Transport(format!("malformed completion response: {e}"))))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| Attempt::Fail(Error::Transport("completion response has no choices".into())))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String> {
        if prompt.body.trim().is_empty() {
            return Err(Error::Precondition("prompt body is empty".into()));
        }
        let request = ChatRequest {
            model: &self.model,
            temperature: self.temperature,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &prompt.task_description,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.body,
                },
            ],
        };
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&request) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.max_retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("llm request failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Label,
    NameMatch,
    FallbackTop1,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Determination {
    pub raw_text: String,
    pub chosen: EntityId,
    pub method: Method,
}

fn label_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^A-Za-z0-9.])([A-Z])\.(?:\s|$)").unwrap())
}

/// Maps a free-text reply onto one of the offered candidates.
///
/// `offered` must be in label order (highest probability first); label
/// matching is only attempted when `labelled` is set.
pub fn parse_answer(raw: &str, offered: &[PromptCandidate], labelled: bool) -> Result<Determination> {
    let Some(first) = offered.first() else {
        return Err(Error::NoCandidates);
    };
    let done = |chosen, method| {
        Ok(Determination {
            raw_text: raw.to_owned(),
            chosen,
            method,
        })
    };
    if labelled {
        for cap in label_pattern().captures_iter(raw) {
            let idx = (cap[1].as_bytes()[0] - b'A') as usize;
            if let Some(c) = offered.get(idx) {
                return done(c.entity, Method::Label);
            }
        }
    }
    let lower = raw.to_lowercase();
    let mut best: Option<&PromptCandidate> = None;
    for c in offered {
        let name = c.name.trim().to_lowercase();
        if name.is_empty() || !lower.contains(&name) {
            continue;
        }
        if best.is_none_or(|b| name.len() > b.name.trim().len()) {
            best = Some(c);
        }
    }
    match best {
        Some(c) => done(c.entity, Method::NameMatch),
        None => done(first.entity, Method::FallbackTop1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_prompt, Variant};

    fn offered() -> Vec<PromptCandidate> {
        ["Seattle Pilots", "Miller Park", "Milwaukee"]
            .iter()
            .enumerate()
            .map(|(i, n)| PromptCandidate {
                entity: EntityId(10 + i as u32),
                name: n.to_string(),
                probability: 0.0,
                facts: vec![],
            })
            .collect()
    }

    #[test]
    fn label_in_verbose_reply() {
        let d = parse_answer("Based on the information provided, the correct answer is B. Miller Park.", &offered(), true).unwrap();
        assert_eq!((d.chosen, d.method), (EntityId(11), Method::Label));
        let d = parse_answer("The correct answer is C.", &offered(), true).unwrap();
        assert_eq!((d.chosen, d.method), (EntityId(12), Method::Label));
    }

    #[test]
    fn label_must_be_offered_and_standalone() {
        // "D." is not offered, "U.S.A." is not a label
        let d = parse_answer("Option D. is wrong, it is in the U.S.A. near Miller Park", &offered(), true).unwrap();
        assert_eq!((d.chosen, d.method), (EntityId(11), Method::NameMatch));
    }

    #[test]
    fn name_match_prefers_longest() {
        // "Milwaukee" is a substring of the reply too, but the longer name wins
        let d = parse_answer("the milwaukee brewers play at miller park, milwaukee", &offered(), true).unwrap();
        assert_eq!(d.chosen, EntityId(11));
        assert_eq!(d.method, Method::NameMatch);
    }

    #[test]
    fn empty_reply_falls_back_to_top1() {
        let d = parse_answer("", &offered(), true).unwrap();
        assert_eq!((d.chosen, d.method), (EntityId(10), Method::FallbackTop1));
        assert!(parse_answer("A.", &[], true).is_err());
    }

    #[test]
    fn unlabelled_variants_skip_labels() {
        let d = parse_answer("The correct answer is B.", &offered(), false).unwrap();
        assert_eq!(d.method, Method::FallbackTop1);
    }

    #[test]
    fn mock_policy_and_scripted_replay() {
        let bundle = build_prompt("q", &offered(), Variant::Mcp).unwrap();
        let mock = MockBackend::always('A');
        assert_eq!(mock.complete(&bundle).unwrap(), "The correct answer is A.");
        let recorded = "Based on the information provided, the correct answer is B. Miller Park.";
        let mock = mock.with_response(prompt_key(&bundle), recorded);
        assert_eq!(mock.complete(&bundle).unwrap(), recorded);
    }

    #[test]
    fn config_validation() {
        let mut c = GatewayConfig::default();
        c.validate().unwrap();
        c.backend = BackendKind::Http;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.endpoint = Some("http://localhost:1/v1/chat/completions".into());
        c.model = Some("m".into());
        c.validate().unwrap();
        c.timeout_secs = 0;
        assert!(c.validate().is_err());
        assert!("grpc".parse::<BackendKind>().is_err());
    }
}
