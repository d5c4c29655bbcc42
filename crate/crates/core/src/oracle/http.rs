use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, SamplingParams};

pub const API_KEY_ENV: &str = "ORACLE_API_KEY";
pub const BASE_URL_ENV: &str = "ORACLE_BASE_URL";

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Generic chat-completions client: one user message per request, bearer
/// token authentication.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Self {
            agent,
            endpoint,
            api_key,
        }
    }

    /// Reads `ORACLE_BASE_URL` and `ORACLE_API_KEY`.
    pub fn from_env() -> Result<Self, String> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| format!("{BASE_URL_ENV} is not set"))?;
        Ok(Self::new(&base, std::env::var(API_KEY_ENV).ok()))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn classify_status(status: u16, body: &str) -> BackendError {
    let message = format!(
        "HTTP {status}: {}",
        body.chars().take(200).collect::<String>()
    );
    match status {
        408 | 409 | 425 | 429 | 500..=599 => BackendError::retryable(message),
        _ => BackendError::fatal(message),
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, query: &str, params: &SamplingParams) -> Result<Completion, BackendError> {
        let request = ChatRequest {
            model: &params.model_id,
            messages: [ChatMessage {
                role: "user",
                content: query,
            }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&request)
            .map_err(|e| BackendError::retryable(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::retryable(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &body));
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::retryable(format!("malformed response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::retryable("response without choices"))?;
        let truncated = matches!(
            choice.finish_reason.as_deref(),
            Some("length") | Some("max_tokens")
        );
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            truncated,
        })
    }
}
