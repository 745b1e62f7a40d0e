//! Chat-completion client with record/replay cassettes.
//!
//! Live requests use the common chat-completions JSON shape. A cassette is
//! one JSON file per request key (`<key>.json`) holding every response ever
//! recorded for that exact request; replay hands them out in order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{Message, RenderedPrompt};

pub const DEFAULT_MODEL: &str = "gpt-4-1106-preview";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
    #[error("network error after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("replay miss: no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("cassette directory {0} does not exist")]
    MissingCassetteDir(PathBuf),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("cassette {path}: {message}")]
    BadCassette { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "dir")]
pub enum LlmMode {
    Live,
    Record(PathBuf),
    Replay(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Name of the environment variable holding the key, never the key.
    pub api_key_env: String,
    pub mode: LlmMode,
    pub request_timeout_s: u64,
    /// First retry delay; doubles on each further attempt.
    pub retry_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            model_id: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output_tokens: 4096,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            mode: LlmMode::Live,
            request_timeout_s: 120,
            retry_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        ProviderConfig { mode: LlmMode::Replay(dir.into()), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `cassette:<key>#<index>` or `live:<request id>`.
    pub source: String,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub provenance: Provenance,
}

/// Every recorded response for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub key: String,
    pub model_id: String,
    pub temperature: f64,
    pub request_snapshot: Vec<Message>,
    pub responses: Vec<CompletionResponse>,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [Message],
}

/// Stable request digest: SHA-256 over a canonical JSON encoding of model,
/// temperature and messages.
pub fn cassette_key(model_id: &str, temperature: f64, messages: &[Message]) -> String {
    let canonical = serde_json::to_vec(&KeyMaterial { model: model_id, temperature, messages })
        .expect("messages serialize");
    hex::encode(Sha256::digest(&canonical))
}

impl Cassette {
    pub fn recompute_key(&self) -> String {
        cassette_key(&self.model_id, self.temperature, &self.request_snapshot)
    }
}

#[derive(Debug)]
pub struct CassetteStore {
    dir: PathBuf,
    // single writer per directory
    write_lock: Mutex<()>,
}

impl CassetteStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(LlmError::MissingCassetteDir(dir));
        }
        Ok(CassetteStore { dir, write_lock: Mutex::new(()) })
    }

    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CassetteStore { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<Cassette>, LlmError> {
        let path = self.path_for(key);
        let data = match std::fs::read_to_string(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let cassette: Cassette = serde_json::from_str(&data)
            .map_err(|e| LlmError::BadCassette { path: path.clone(), message: e.to_string() })?;
        Ok(Some(cassette))
    }

    /// Appends `response` to the cassette for `messages`, creating it if
    /// needed. Returns the index of the new response.
    pub fn append(
        &self,
        model_id: &str,
        temperature: f64,
        messages: &[Message],
        response: CompletionResponse,
    ) -> Result<usize, LlmError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let key = cassette_key(model_id, temperature, messages);
        let mut cassette = self.load(&key)?.unwrap_or_else(|| Cassette {
            key: key.clone(),
            model_id: model_id.to_string(),
            temperature,
            request_snapshot: messages.to_vec(),
            responses: Vec::new(),
        });
        cassette.responses.push(response);
        let json = serde_json::to_string_pretty(&cassette).expect("cassette serializes");
        crate::write_atomic(&self.path_for(&key), json.as_bytes())?;
        Ok(cassette.responses.len() - 1)
    }
}

/// Anything that answers prompts.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<CompletionResponse, LlmError>;

    fn model_id(&self) -> &str;
}

#[derive(Debug)]
pub struct LlmClient {
    cfg: ProviderConfig,
    store: Option<CassetteStore>,
    cursors: Mutex<HashMap<String, usize>>,
    http: OnceLock<reqwest::blocking::Client>,
}

impl LlmClient {
    pub fn new(cfg: ProviderConfig) -> Result<Self, LlmError> {
        if !(0.0..=2.0).contains(&cfg.temperature) {
            return Err(LlmError::InvalidConfig(format!("temperature {} outside 0..=2", cfg.temperature)));
        }
        let store = match &cfg.mode {
            LlmMode::Live => None,
            LlmMode::Replay(dir) => Some(CassetteStore::open(dir)?),
            LlmMode::Record(dir) => Some(CassetteStore::create(dir)?),
        };
        Ok(LlmClient { cfg, store, cursors: Mutex::new(HashMap::new()), http: OnceLock::new() })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn replay(&self, store: &CassetteStore, prompt: &RenderedPrompt) -> Result<CompletionResponse, LlmError> {
        let key = cassette_key(&self.cfg.model_id, self.cfg.temperature, &prompt.messages);
        let cassette = store.load(&key)?.ok_or_else(|| LlmError::ReplayMiss(key.clone()))?;
        let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
        let cursor = cursors.entry(key.clone()).or_insert(0);
        let mut response = cassette.responses.get(*cursor).cloned().ok_or(LlmError::ReplayMiss(key.clone()))?;
        *cursor += 1;
        response.provenance.round = prompt.round;
        Ok(response)
    }

    fn api_key(&self) -> Result<String, LlmError> {
        std::env::var(&self.cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::AuthMissing(self.cfg.api_key_env.clone()))
    }

    fn live(&self, prompt: &RenderedPrompt) -> Result<CompletionResponse, LlmError> {
        let key = self.api_key()?;
        let http = self.http.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(self.cfg.request_timeout_s))
                .build()
                .expect("http client builds")
        });
        let body = serde_json::json!({
            "model": self.cfg.model_id,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
            "n": 1,
            "messages": prompt.messages,
        });

        let mut last_error = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(self.cfg.retry_base_ms << (attempt - 2)));
            }
            let sent = http.post(&self.cfg.endpoint_url).bearer_auth(&key).json(&body).send();
            let resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "model request failed");
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            if status.as_u16() == 429 || status.is_server_error() {
                tracing::warn!(attempt, status = status.as_u16(), "transient provider error");
                last_error = format!("{status}: {text}");
                continue;
            }
            if !status.is_success() {
                return Err(LlmError::ProviderError { status: status.as_u16(), body: text });
            }
            return parse_chat_response(&text, prompt.round);
        }
        Err(LlmError::Network { attempts: MAX_ATTEMPTS, message: last_error })
    }
}

/// Reads `choices[0]` of a chat-completions response body.
pub fn parse_chat_response(body: &str, round: u32) -> Result<CompletionResponse, LlmError> {
    #[derive(Deserialize)]
    struct Wire {
        #[serde(default)]
        id: String,
        choices: Vec<Choice>,
        usage: Option<WireUsage>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: WireMessage,
        finish_reason: Option<String>,
    }
    #[derive(Deserialize)]
    struct WireMessage {
        content: Option<String>,
    }
    #[derive(Deserialize)]
    struct WireUsage {
        prompt_tokens: u64,
        completion_tokens: u64,
    }

    let bad = |m: String| LlmError::ProviderError { status: 200, body: m };
    let wire: Wire = serde_json::from_str(body).map_err(|e| bad(format!("unreadable response: {e}")))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| bad("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Other,
    };
    let text = choice.message.content.unwrap_or_default();
    if text.is_empty() && finish_reason == FinishReason::Stop {
        return Err(bad("empty completion".into()));
    }
    Ok(CompletionResponse {
        text,
        finish_reason,
        usage: wire.usage.map(|u| Usage { prompt_tokens: u.prompt_tokens, output_tokens: u.completion_tokens }),
        provenance: Provenance { source: format!("live:{}", wire.id), round },
    })
}

impl LanguageModel for LlmClient {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<CompletionResponse, LlmError> {
        if prompt.messages.is_empty() {
            return Err(LlmError::InvalidConfig("prompt has no messages".into()));
        }
        match (&self.cfg.mode, &self.store) {
            (LlmMode::Replay(_), Some(store)) => self.replay(store, prompt),
            (LlmMode::Record(_), Some(store)) => {
                let mut response = self.live(prompt)?;
                let key = cassette_key(&self.cfg.model_id, self.cfg.temperature, &prompt.messages);
                let index = store.append(&self.cfg.model_id, self.cfg.temperature, &prompt.messages, response.clone())?;
                response.provenance.source = format!("cassette:{key}#{index}");
                Ok(response)
            }
            _ => self.live(prompt),
        }
    }

    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }
}

const CODE_WORDS: &[&str] = &["lemma", "method", "ensures", "requires", "calc"];

const STATEMENT_STARTS: &[&str] = &[
    "lemma", "method", "function", "predicate", "ghost", "requires", "ensures", "decreases", "invariant",
    "modifies", "reads", "calc", "var", "assert", "assume", "if", "else", "while", "for", "return", "match",
    "case", "forall", "exists", "datatype", "type", "module", "import", "include", "class", "const", "//", "/*",
    "{", "}", "==", "<=", ">=", "<", ">", "&&", "||", "|", "+", "-", "*",
];

fn has_word(line: &str, word: &str) -> bool {
    line.match_indices(word).any(|(i, _)| {
        let before = line[..i].chars().next_back();
        let after = line[i + word.len()..].chars().next();
        let ident = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        !ident(before) && !ident(after)
    })
}

fn is_code_line(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() {
        return false;
    }
    let starts = STATEMENT_STARTS.iter().any(|s| {
        t.starts_with(s) && (!s.chars().all(char::is_alphabetic) || has_word(&t[..s.len().min(t.len())], s))
    });
    starts || t.ends_with([';', '{', '}', '(', ')', ',']) || t.ends_with("==") || t.ends_with("==>")
}

/// Code snippets in a model answer: the bodies of fenced blocks, or, when
/// there are none, the longest run of code-looking lines mentioning a
/// Dafny keyword. Every snippet is a contiguous substring of `text`.
pub fn extract_code_blocks(text: &str) -> Vec<&str> {
    let mut lines = Vec::new();
    let mut off = 0;
    for l in text.split_inclusive('\n') {
        lines.push((off, l));
        off += l.len();
    }

    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    for &(start, l) in &lines {
        if l.trim_start().starts_with("```") {
            match open {
                None => open = Some(start + l.len()),
                Some(body) => {
                    // drop the newline that precedes the closing fence
                    let end = if start > body { start - 1 } else { start };
                    blocks.push(&text[body..end.max(body)]);
                    open = None;
                }
            }
        }
    }
    if let Some(body) = open {
        blocks.push(text[body..].trim_end_matches('\n'));
    }
    if !blocks.is_empty() {
        return blocks;
    }

    let mut best: Option<(usize, usize, usize)> = None; // (line count, start, end)
    let mut i = 0;
    while i < lines.len() {
        if !is_code_line(lines[i].1) {
            i += 1;
            continue;
        }
        let first = i;
        while i < lines.len() && is_code_line(lines[i].1) {
            i += 1;
        }
        let run = &lines[first..i];
        if !run.iter().any(|(_, l)| CODE_WORDS.iter().any(|w| has_word(l, w))) {
            continue;
        }
        let start = run[0].0;
        let (last_off, last) = run[run.len() - 1];
        let end = last_off + last.trim_end_matches(['\n', '\r']).len();
        if best.is_none_or(|(n, _, _)| run.len() > n) {
            best = Some((run.len(), start, end));
        }
    }
    best.map(|(_, s, e)| vec![&text[s..e]]).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{Role, TaskKind};

    fn prompt(content: &str) -> RenderedPrompt {
        RenderedPrompt::from_messages(
            TaskKind::Repair,
            1,
            vec![
                Message { role: Role::System, content: "s".into() },
                Message { role: Role::User, content: content.into() },
            ],
        )
    }

    #[test]
    fn fenced_blocks_in_order() {
        let t = "intro\n```dafny\nA\n```\nmiddle\n```\nB1\nB2\n```\n";
        assert_eq!(extract_code_blocks(t), vec!["A", "B1\nB2"]);
    }

    #[test]
    fn unfenced_lemma() {
        let t = "Here is a helper you could add.\nlemma L(x: int)\n  ensures x + 0 == x\n{\n}\nIt should help.\n";
        assert_eq!(extract_code_blocks(t), vec!["lemma L(x: int)\n  ensures x + 0 == x\n{\n}"]);
    }

    #[test]
    fn no_code() {
        assert!(extract_code_blocks("no code here at all").is_empty());
    }

    #[test]
    fn key_ignores_serialization_layout() {
        let msgs = vec![Message { role: Role::User, content: "x".into() }];
        let again: Vec<Message> = serde_json::from_str(&serde_json::to_string_pretty(&msgs).unwrap()).unwrap();
        assert_eq!(cassette_key("m", 0.0, &msgs), cassette_key("m", 0.0, &again));
        assert_ne!(cassette_key("m", 0.0, &msgs), cassette_key("m", 0.5, &msgs));
    }

    #[test]
    fn replay_miss_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = CassetteStore::create(dir.path()).unwrap();
        let p = prompt("hello");
        for text in ["one", "two"] {
            let r = CompletionResponse {
                text: text.into(),
                finish_reason: FinishReason::Stop,
                usage: None,
                provenance: Provenance { source: "test".into(), round: 1 },
            };
            store.append(DEFAULT_MODEL, 0.0, &p.messages, r).unwrap();
        }
        let client = LlmClient::new(ProviderConfig::replay(dir.path())).unwrap();
        assert_eq!(client.complete(&p).unwrap().text, "one");
        assert_eq!(client.complete(&p).unwrap().text, "two");
        assert!(matches!(client.complete(&p), Err(LlmError::ReplayMiss(_))));
        assert!(matches!(client.complete(&prompt("other")), Err(LlmError::ReplayMiss(_))));
    }

    #[test]
    fn live_without_key_is_auth_missing() {
        let cfg = ProviderConfig { api_key_env: "DAFNY_PILOT_TEST_UNSET_KEY".into(), ..Default::default() };
        let client = LlmClient::new(cfg).unwrap();
        assert!(matches!(client.complete(&prompt("x")), Err(LlmError::AuthMissing(_))));
    }

    #[test]
    fn parses_chat_response() {
        let body = r#"{"id":"r1","choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let r = parse_chat_response(body, 2).unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.provenance, Provenance { source: "live:r1".into(), round: 2 });
        assert_eq!(r.usage, Some(Usage { prompt_tokens: 3, output_tokens: 1 }));
    }
}
