use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{extract_vote, JudgeError, JudgeTask, ModelVerdict, Vote};
use crate::hash::derive_seed;
use crate::pair::PreferencePair;

pub const ENV_JUDGE_URL: &str = "PREFCURATE_JUDGE_URL";
pub const ENV_JUDGE_KEY: &str = "PREFCURATE_JUDGE_KEY";

/// A source of sampled judge answers.
pub trait JudgeProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Draws `n` answers for the task's prompt.
    fn sample(&self, task: &JudgeTask, n: usize) -> Result<Vec<Vote>, JudgeError>;
}

/// Ground truth about a pair's stored orientation, for simulated annotators.
pub trait PreferenceOracle: Send + Sync {
    /// `Some(true)` if the stored chosen response is truly better, `None`
    /// when the oracle knows nothing about the pair.
    fn chosen_is_better(&self, pair: &PreferencePair) -> Option<bool>;
}

/// Treats every stored orientation as correct.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrustLabels;

impl PreferenceOracle for TrustLabels {
    fn chosen_is_better(&self, _pair: &PreferencePair) -> Option<bool> {
        Some(true)
    }
}

/// Offline judge for tests and dry runs.
///
/// Each sample is, with probability `position_bias`, "Candidate 1"
/// regardless of content; otherwise it names the truly better response with
/// probability `accuracy`. Randomness is a pure function of the seed, the
/// model id and the pair id.
pub struct StubJudge {
    model_id: String,
    accuracy: f64,
    position_bias: f64,
    seed: u64,
    oracle: Arc<dyn PreferenceOracle>,
}

impl StubJudge {
    /// # Panics
    /// If `accuracy` is outside `[0, 1]`.
    pub fn new(
        model_id: impl Into<String>,
        accuracy: f64,
        seed: u64,
        oracle: Arc<dyn PreferenceOracle>,
    ) -> Self {
        assert!((0.0..=1.0).contains(&accuracy), "accuracy must be in [0, 1]");
        StubJudge {
            model_id: model_id.into(),
            accuracy,
            position_bias: 0.0,
            seed,
            oracle,
        }
    }

    /// # Panics
    /// If `bias` is outside `[0, 1]`.
    pub fn with_position_bias(mut self, bias: f64) -> Self {
        assert!((0.0..=1.0).contains(&bias), "position bias must be in [0, 1]");
        self.position_bias = bias;
        self
    }
}

impl JudgeProvider for StubJudge {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn sample(&self, task: &JudgeTask, n: usize) -> Result<Vec<Vote>, JudgeError> {
        let key = format!("{}/{}", self.model_id, task.pair_id);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &key));
        let truth = self.oracle.chosen_is_better(&task.target);
        Ok((0..n)
            .map(|_| {
                if rng.random_bool(self.position_bias) {
                    return Vote::Candidate1;
                }
                let Some(truth) = truth else {
                    return Vote::Unsure;
                };
                let right = rng.random_bool(self.accuracy);
                let verdict = if truth == right {
                    ModelVerdict::ChosenStands
                } else {
                    ModelVerdict::Swap
                };
                task.permutation.present(verdict)
            })
            .collect())
    }
}

#[derive(Serialize)]
pub(super) struct JudgeRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub n_samples: usize,
    pub temperature: f64,
}

#[derive(Deserialize)]
pub(super) struct JudgeResponse {
    pub completions: Vec<String>,
}

/// Judge served over HTTP.
///
/// Request: `POST {endpoint}` with `{model, prompt, n_samples, temperature}`.
/// Response: `{"completions": [text, ...]}`; each text is parsed with
/// [`extract_vote`].
pub struct HttpJudge {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    client: reqwest::blocking::Client,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("static client configuration");
        HttpJudge {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            temperature: 1.0,
            client,
        }
    }

    /// Reads the endpoint and key from the environment.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let url = std::env::var(ENV_JUDGE_URL).ok()?;
        Some(Self::new(url, model, std::env::var(ENV_JUDGE_KEY).ok()))
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    fn err(&self, message: String, retryable: bool) -> JudgeError {
        JudgeError::Provider {
            model_id: self.model.clone(),
            message,
            retryable,
        }
    }
}

impl JudgeProvider for HttpJudge {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn sample(&self, task: &JudgeTask, n: usize) -> Result<Vec<Vote>, JudgeError> {
        let mut req = self.client.post(&self.endpoint).json(&JudgeRequest {
            model: &self.model,
            prompt: &task.prompt,
            n_samples: n,
            temperature: self.temperature,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| self.err(e.to_string(), true))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err(self.err(format!("status {status}"), retryable));
        }
        let body: JudgeResponse = resp.json().map_err(|e| self.err(e.to_string(), false))?;
        Ok(body.completions.iter().map(|c| extract_vote(c)).collect())
    }
}
