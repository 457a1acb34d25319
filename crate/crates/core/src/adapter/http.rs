use std::time::Duration;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use url::Url;

use super::wire::{
    self, AnswerRequest, AnswerResponse, EmbedRequest, EmbedResponse, ErrorBody, Health,
    JudgeResponse, PathsRequest, ScoresResponse,
};
use super::{
    Adapter, AdapterError, AnswerReply, Embedder, JudgeReply, EP_ANSWER, EP_EMBED, EP_HEALTH,
    EP_JUDGE, EP_SCORE_PATHS,
};

#[derive(Debug, Clone)]
pub struct AdapterEndpointConfig {
    pub base_url: Url,
    pub timeout: Duration,
    /// Extra attempts after the first; total attempts = retries + 1.
    pub retries: u32,
    pub auth_token: Option<String>,
    /// Backoff before retry `i` is drawn uniformly from `[0, base * 2^i]`.
    pub backoff_base: Duration,
}

impl AdapterEndpointConfig {
    pub fn new(base_url: Url) -> Self {
        Self {
            base_url,
            timeout: Duration::from_secs(120),
            retries: 2,
            auth_token: None,
            backoff_base: Duration::from_secs(1),
        }
    }
}

/// Blocking client for a model-adapter server. Every reply is validated
/// strictly; violations surface as [`AdapterError::ProtocolViolation`].
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    cfg: AdapterEndpointConfig,
    client: reqwest::blocking::Client,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(AdapterError),
}

impl HttpAdapter {
    pub fn new(cfg: AdapterEndpointConfig) -> Result<Self, AdapterError> {
        if cfg.timeout.is_zero() {
            return Err(AdapterError::Unavailable {
                endpoint: EP_HEALTH,
                attempts: 0,
                message: "timeout must be positive".into(),
            });
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| AdapterError::Unavailable {
                endpoint: EP_HEALTH,
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { cfg, client })
    }

    pub fn config(&self) -> &AdapterEndpointConfig {
        &self.cfg
    }

    fn url(&self, endpoint: &str) -> Result<Url, AdapterError> {
        self.cfg
            .base_url
            .join(endpoint.trim_start_matches('/'))
            .map_err(|e| AdapterError::Unavailable {
                endpoint: EP_HEALTH,
                attempts: 0,
                message: e.to_string(),
            })
    }

    fn backoff(&self, retry: u32) -> Duration {
        let cap = self.cfg.backoff_base.saturating_mul(1u32 << retry.min(16));
        if cap.is_zero() {
            return cap;
        }
        let nanos = rand::rng().random_range(0..=cap.as_nanos().min(u64::MAX as u128) as u64);
        Duration::from_nanos(nanos)
    }

    fn once<T: DeserializeOwned>(
        &self,
        endpoint: &'static str,
        body: Option<&impl Serialize>,
    ) -> Attempt<(T, String)> {
        let url = match self.url(endpoint) {
            Ok(u) => u,
            Err(e) => return Attempt::Fail(e),
        };
        let mut req = match body {
            Some(b) => self.client.post(url).json(b),
            None => self.client.get(url),
        };
        if let Some(token) = &self.cfg.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if !status.is_success() {
            let detail = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            let message = format!("HTTP {}: {}", status.as_u16(), detail);
            let retryable =
                status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408;
            return if retryable {
                Attempt::Retry(message)
            } else {
                Attempt::Fail(AdapterError::Unavailable {
                    endpoint,
                    attempts: 0,
                    message,
                })
            };
        }
        match serde_json::from_str::<T>(&text) {
            Ok(v) => Attempt::Done((v, text)),
            Err(e) => Attempt::Fail(AdapterError::ProtocolViolation {
                endpoint,
                message: format!("malformed reply: {e}"),
            }),
        }
    }

    fn call<T: DeserializeOwned>(
        &self,
        endpoint: &'static str,
        body: Option<&impl Serialize>,
    ) -> Result<(T, String), AdapterError> {
        let total = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 0..total {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.once(endpoint, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(AdapterError::Unavailable { message, .. }) => {
                    return Err(AdapterError::Unavailable {
                        endpoint,
                        attempts: attempt + 1,
                        message,
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    tracing::debug!(endpoint, attempt, error = %msg, "adapter call failed");
                    last = msg;
                }
            }
        }
        Err(AdapterError::Unavailable {
            endpoint,
            attempts: total,
            message: last,
        })
    }
}

fn violation(endpoint: &'static str) -> impl Fn(String) -> AdapterError {
    move |message| AdapterError::ProtocolViolation { endpoint, message }
}

impl Adapter for HttpAdapter {
    fn health(&self) -> Result<Health, AdapterError> {
        let (h, _): (Health, _) = self.call(EP_HEALTH, None::<&()>)?;
        wire::validate_health(&h).map_err(violation(EP_HEALTH))?;
        Ok(h)
    }

    fn score_paths(&self, question: &str, paths: &[String]) -> Result<Vec<f64>, AdapterError> {
        let body = PathsRequest {
            question: question.to_owned(),
            paths: paths.to_vec(),
        };
        let (r, _): (ScoresResponse, _) = self.call(EP_SCORE_PATHS, Some(&body))?;
        wire::validate_scores(paths.len(), &r.scores).map_err(violation(EP_SCORE_PATHS))?;
        Ok(r.scores)
    }

    fn judge(&self, question: &str, paths: &[String]) -> Result<JudgeReply, AdapterError> {
        let body = PathsRequest {
            question: question.to_owned(),
            paths: paths.to_vec(),
        };
        let (r, raw): (JudgeResponse, _) = self.call(EP_JUDGE, Some(&body))?;
        wire::validate_selected(paths.len(), &r.selected).map_err(violation(EP_JUDGE))?;
        Ok(JudgeReply {
            selected: r.selected,
            raw,
        })
    }

    fn answer(&self, prompt: &str, max_new_tokens: usize) -> Result<AnswerReply, AdapterError> {
        let body = AnswerRequest {
            prompt: prompt.to_owned(),
            max_new_tokens,
        };
        let (r, _): (AnswerResponse, _) = self.call(EP_ANSWER, Some(&body))?;
        let answers = wire::validate_answers(&r.answers).map_err(violation(EP_ANSWER))?;
        Ok(AnswerReply {
            answers,
            raw_text: r.raw_text,
        })
    }
}

impl Embedder for HttpAdapter {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, AdapterError> {
        let body = EmbedRequest {
            texts: texts.to_vec(),
        };
        let (r, _): (EmbedResponse, _) = self.call(EP_EMBED, Some(&body))?;
        wire::validate_embeddings(texts.len(), &r.embeddings).map_err(violation(EP_EMBED))?;
        Ok(r.embeddings)
    }
}
