use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest, Role};

/// OpenAI-compatible chat-completions endpoint with bearer auth.
#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    api_key: String,
    model: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            agent,
        }
    }

    /// Reads LLM_BASE_URL, LLM_API_KEY and LLM_MODEL.
    pub fn from_env() -> Result<Self, String> {
        let get = |k: &str| std::env::var(k).map_err(|_| format!("environment variable {k} is not set"));
        Ok(RemoteBackend::new(get("LLM_BASE_URL")?, get("LLM_API_KEY")?, get("LLM_MODEL")?))
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_text})];
        for m in &request.messages {
            let role = match m.role {
                Role::System => "system",
                Role::Assistant => "assistant",
                Role::User => "user",
            };
            messages.push(json!({"role": role, "content": m.text}));
        }
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl ChatBackend for RemoteBackend {
    fn call(&self, request: &ChatRequest, timeout: Duration) -> Result<BackendReply, BackendError> {
        let started = Instant::now();
        let url = format!("{}/chat/completions", self.base_url);
        let result = self
            .agent
            .post(&url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.body(request));
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(BackendError::Timeout),
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        if status >= 400 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { status, body });
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
            .to_string();
        Ok(BackendReply {
            text,
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64(),
            completion_tokens: value["usage"]["completion_tokens"].as_u64(),
            latency: Some(started.elapsed().as_secs_f64()),
        })
    }

    fn name(&self) -> &str {
        "remote"
    }
}
