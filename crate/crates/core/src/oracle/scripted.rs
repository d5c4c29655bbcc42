use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, SamplingParams};

pub const DEFAULT_REFUSAL: &str = "I'm sorry, but I cannot help with that.";

/// What a scripted backend answers when no rule matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Refusal(String),
    Error,
}

impl Default for Fallback {
    fn default() -> Self {
        Fallback::Refusal(DEFAULT_REFUSAL.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Case-insensitive glob over the whole query; `*` matches anything.
    pub pattern: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    rules: Vec<ScriptRule>,
    #[serde(default)]
    default: Fallback,
}

fn glob_regex(pattern: &str) -> Regex {
    let body = pattern
        .split('*')
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(".*");
    RegexBuilder::new(&format!("^{body}$"))
        .case_insensitive(true)
        .dot_matches_new_line(true)
        .build()
        .expect("escaped glob is a valid regex")
}

/// Deterministic oracle answering from an ordered rule list; first match wins.
pub struct ScriptedBackend {
    rules: Vec<(Regex, ScriptRule)>,
    fallback: Fallback,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, fallback: Fallback) -> Self {
        Self {
            rules: rules
                .into_iter()
                .map(|r| (glob_regex(&r.pattern), r))
                .collect(),
            fallback,
            calls: AtomicUsize::new(0),
        }
    }

    /// Convenience constructor from `(pattern, response)` pairs.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
        fallback: Fallback,
    ) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(p, r)| ScriptRule {
                    pattern: p.to_string(),
                    response: r.to_string(),
                    truncated: false,
                })
                .collect(),
            fallback,
        )
    }

    /// Script file: `{"rules": [{"pattern", "response", "truncated"?}], "default"?}`
    /// where `default` is `{"refusal": "..."}` or `"error"`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let file: ScriptFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Ok(Self::new(file.rules, file.default))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, query: &str, _params: &SamplingParams) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some((_, rule)) = self.rules.iter().find(|(re, _)| re.is_match(query)) {
            return Ok(Completion {
                text: rule.response.clone(),
                truncated: rule.truncated,
            });
        }
        match &self.fallback {
            Fallback::Refusal(text) => Ok(Completion::new(text.clone())),
            Fallback::Error => Err(BackendError::retryable(format!(
                "no scripted answer for {query:?}"
            ))),
        }
    }
}

/// Replays a recorded run: every call that reaches this backend is a cache
/// miss and fails immediately.
pub struct CacheOnlyBackend {
    replay_id: String,
}

impl CacheOnlyBackend {
    /// `replay_id` is the id of the backend that recorded the cache.
    pub fn new(replay_id: &str) -> Self {
        Self {
            replay_id: replay_id.to_string(),
        }
    }
}

impl Backend for CacheOnlyBackend {
    fn id(&self) -> &str {
        &self.replay_id
    }

    fn complete(&self, query: &str, _params: &SamplingParams) -> Result<Completion, BackendError> {
        Err(BackendError::fatal(format!("cache miss for {query:?}")))
    }
}

/// Records queries and answers every one with an empty response.
#[derive(Default)]
pub struct DryRunBackend {
    queries: Mutex<Vec<String>>,
}

impl DryRunBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn queries(&self) -> Vec<String> {
        self.queries.lock().unwrap().clone()
    }
}

impl Backend for DryRunBackend {
    fn id(&self) -> &str {
        "dry-run"
    }

    fn complete(&self, query: &str, _params: &SamplingParams) -> Result<Completion, BackendError> {
        self.queries.lock().unwrap().push(query.to_string());
        Ok(Completion::new(""))
    }
}
