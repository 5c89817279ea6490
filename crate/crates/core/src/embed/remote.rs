//! Remote embedding service client.
//!
//! Wire call: `POST {endpoint}` with `{"model": .., "inputs": [text]}`,
//! answered by `{"vectors": [[f64]]}` in input order.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedding, EmbeddingProvider};

pub const ENV_URL: &str = "PREFCURATE_EMBED_URL";
pub const ENV_KEY: &str = "PREFCURATE_EMBED_KEY";

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteEmbedder {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
    tag: String,
    batch_size: usize,
    max_in_flight: usize,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        let model = model.into();
        RemoteEmbedder {
            endpoint: endpoint.into(),
            api_key: None,
            tag: format!("remote:{model}/{dim}"),
            model,
            dim,
            batch_size: 64,
            max_in_flight: 4,
            retries: 2,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client"),
        }
    }

    /// Endpoint and key from `PREFCURATE_EMBED_URL` / `PREFCURATE_EMBED_KEY`.
    pub fn from_env(model: impl Into<String>, dim: usize) -> Option<Self> {
        let url = std::env::var(ENV_URL).ok()?;
        let mut e = Self::new(url, model, dim);
        e.api_key = std::env::var(ENV_KEY).ok();
        Some(e)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_batching(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    fn call(&self, inputs: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let mut req = self.client.post(&self.endpoint).json(&Request {
            model: &self.model,
            inputs,
        });
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| EmbedError::Provider {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Provider {
                message: format!("status {status}"),
                retryable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let body: Response = resp.json().map_err(|e| EmbedError::Provider {
            message: format!("bad response body: {e}"),
            retryable: false,
        })?;
        if body.vectors.len() != inputs.len() {
            return Err(EmbedError::Count {
                want: inputs.len(),
                got: body.vectors.len(),
            });
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        actual: v.len(),
                    });
                }
                Embedding::normalized(v).ok_or_else(|| EmbedError::Provider {
                    message: "zero or non-finite vector".into(),
                    retryable: false,
                })
            })
            .collect()
    }

    fn call_with_retry(&self, inputs: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let mut attempt = 0;
        loop {
            match self.call(inputs) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(100 << attempt));
                }
                other => return other,
            }
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let chunks: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let mut results: Vec<Option<Result<Vec<Embedding>, EmbedError>>> =
            (0..chunks.len()).map(|_| None).collect();
        // Waves of at most `max_in_flight` requests; slots keep input order.
        for (wave, slots) in chunks
            .chunks(self.max_in_flight)
            .zip(results.chunks_mut(self.max_in_flight))
        {
            std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|c| s.spawn(move || self.call_with_retry(c)))
                    .collect();
                for (slot, h) in slots.iter_mut().zip(handles) {
                    *slot = Some(h.join().expect("embedding worker panicked"));
                }
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r.expect("every chunk ran")?);
        }
        Ok(out)
    }
}
