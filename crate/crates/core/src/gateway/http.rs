//! OpenAI-style HTTP transport: `POST {endpoint}/chat/completions` and
//! `POST {endpoint}/embeddings` with a bearer token. 401/403 are fatal;
//! 408/429/5xx and transport errors are retryable.

use serde::Deserialize;
use serde_json::json;

use super::{AttemptError, ChatRequest, GatewayError};

pub(crate) struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    index: usize,
    embedding: Vec<f32>,
}

impl HttpBackend {
    pub(crate) fn new(profile: &super::GatewayProfile, token: String) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            endpoint: profile.endpoint.trim_end_matches('/').to_string(),
            token,
        }
    }

    pub(crate) fn chat(
        &self,
        model: &str,
        request: &ChatRequest,
        send_top_k: bool,
    ) -> Result<String, AttemptError> {
        let mut body = json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        if send_top_k {
            body["top_k"] = json!(request.top_k);
        }
        let text = self.post("chat/completions", &body)?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Retryable(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AttemptError::Retryable("chat response had no choices".into()))
    }

    pub(crate) fn embed(
        &self,
        model: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f32>>, AttemptError> {
        let body = json!({ "model": model, "input": texts });
        let text = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Retryable(format!("malformed embedding response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(AttemptError::Retryable(format!(
                "embedding response had {} rows for {} inputs",
                parsed.data.len(),
                texts.len()
            )));
        }
        let mut rows = parsed.data;
        rows.sort_by_key(|r| r.index);
        Ok(rows.into_iter().map(|r| r.embedding).collect())
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, AttemptError> {
        let url = format!("{}/{}", self.endpoint, path);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.token)
            .json(body)
            .send()
            .map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(AttemptError::Fatal(GatewayError::Auth(format!(
                "endpoint rejected credentials with {status}"
            ))));
        }
        if !status.is_success() {
            return Err(AttemptError::Retryable(format!("http status {status}")));
        }
        response
            .text()
            .map_err(|e| AttemptError::Retryable(format!("reading body: {e}")))
    }
}
