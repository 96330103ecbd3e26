//! OpenAI-compatible chat-completions client over blocking HTTP.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError, Role};

const MAX_RETRIES: u32 = 2;
const BACKOFF_BASE_MS: u64 = 250;

/// Client for any endpoint speaking `POST {base_url}/chat/completions`.
pub struct LiveBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    n: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    message: WireChoiceMessage,
}

#[derive(Deserialize, Default)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl LiveBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(120))
            .build()
            .expect("default TLS client");
        LiveBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client,
        }
    }

    fn post_once(&self, request: &ChatRequest, n: usize) -> Result<Vec<String>, PostError> {
        let mut messages = vec![WireMessage { role: "system", content: &request.system }];
        for turn in &request.turns {
            messages.push(WireMessage {
                role: match turn.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                },
                content: &turn.content,
            });
        }
        let body = WireRequest {
            model: &self.model,
            messages,
            temperature: request.temperature,
            n,
        };
        let url = format!("{}/chat/completions", self.base_url);
        let mut builder = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| PostError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| PostError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(PostError::Provider {
                status: status.as_u16(),
                message: trim_body(&text),
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| PostError::Provider {
            status: status.as_u16(),
            message: format!("unparseable response body: {e}"),
        })?;
        if parsed.choices.is_empty() {
            return Err(PostError::Provider {
                status: status.as_u16(),
                message: "response carried no choices".into(),
            });
        }
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    /// One logical call with transport retries. Provider rejections are
    /// terminal; only transport failures are retried, with backoff.
    fn post_with_retries(&self, request: &ChatRequest, n: usize) -> Result<Vec<String>, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.post_once(request, n) {
                Ok(texts) => return Ok(texts),
                Err(PostError::Provider { status, message }) => {
                    return Err(LlmError::Provider { status, message })
                }
                Err(PostError::Transport(message)) => {
                    if attempts > MAX_RETRIES {
                        return Err(LlmError::Transport { attempts, message });
                    }
                    thread::sleep(Duration::from_millis(
                        BACKOFF_BASE_MS << (attempts - 1),
                    ));
                }
            }
        }
    }
}

enum PostError {
    Transport(String),
    Provider { status: u16, message: String },
}

fn trim_body(text: &str) -> String {
    const LIMIT: usize = 400;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let cut: String = text.chars().take(LIMIT).collect();
        format!("{cut}…")
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        let want = request.n_samples.max(1);
        let mut texts = self.post_with_retries(request, want)?;
        // Providers that ignore `n` return a single choice; top up with
        // sequential single-sample calls.
        while texts.len() < want {
            let mut more = self.post_with_retries(request, 1)?;
            texts.append(&mut more);
        }
        texts.truncate(want);
        Ok(texts)
    }
}
