//! Batched pre-verification of objective pairs.
//!
//! Each response is judged on its own, one query per response, as correct
//! or incorrect. The results are hints for human annotators and never decide
//! a pair by themselves.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::provider::{JudgeRequest, JudgeResponse};
use super::JudgeError;
use crate::pair::{AttributeSet, Objectivity, PairId, PreferencePair, Turn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintOutcome {
    Correct,
    Incorrect,
    #[serde(rename = "n/a")]
    NotApplicable,
}

/// Per-response judgments for one pair, in stored orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreverifyHint {
    pub pair_id: PairId,
    pub chosen: HintOutcome,
    pub rejected: HintOutcome,
    pub model_id: String,
}

pub trait ResponseVerifier: Send + Sync {
    fn model_id(&self) -> &str;

    fn verify(&self, conversation: &[Turn], response: &str) -> Result<HintOutcome, JudgeError>;
}

/// Prompt for judging a single response.
pub fn verify_prompt(conversation: &[Turn], response: &str) -> String {
    let mut out = String::from(
        "Decide whether the final response correctly and completely answers the last user turn.\n\n",
    );
    for t in conversation {
        let _ = writeln!(out, "[{}]\n{}", t.role.as_str(), t.content);
    }
    let _ = writeln!(out, "\n[response]\n{response}\n");
    out.push_str("Reason step by step, then give your final judgment on the last line as exactly \"Correct\" or \"Incorrect\".\n");
    out
}

/// Reads the last non-blank line; anything other than the two verdict words
/// is not applicable.
pub fn extract_judgment(text: &str) -> HintOutcome {
    match text.lines().rev().map(str::trim).find(|l| !l.is_empty()) {
        Some("Correct") => HintOutcome::Correct,
        Some("Incorrect") => HintOutcome::Incorrect,
        _ => HintOutcome::NotApplicable,
    }
}

/// Looks responses up in a fixed answer key.
pub struct StubVerifier {
    model_id: String,
    key: HashMap<String, bool>,
}

impl StubVerifier {
    pub fn new(model_id: impl Into<String>, key: HashMap<String, bool>) -> Self {
        StubVerifier {
            model_id: model_id.into(),
            key,
        }
    }
}

impl ResponseVerifier for StubVerifier {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn verify(&self, _conversation: &[Turn], response: &str) -> Result<HintOutcome, JudgeError> {
        Ok(match self.key.get(response) {
            Some(true) => HintOutcome::Correct,
            Some(false) => HintOutcome::Incorrect,
            None => HintOutcome::NotApplicable,
        })
    }
}

/// Verifier behind the same HTTP contract as the judges, one greedy sample
/// per response.
pub struct HttpVerifier {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpVerifier {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("static client configuration");
        HttpVerifier {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client,
        }
    }
}

impl ResponseVerifier for HttpVerifier {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn verify(&self, conversation: &[Turn], response: &str) -> Result<HintOutcome, JudgeError> {
        let err = |message: String, retryable| JudgeError::Provider {
            model_id: self.model.clone(),
            message,
            retryable,
        };
        let prompt = verify_prompt(conversation, response);
        let mut req = self.client.post(&self.endpoint).json(&JudgeRequest {
            model: &self.model,
            prompt: &prompt,
            n_samples: 1,
            temperature: 0.0,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| err(e.to_string(), true))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(err(format!("status {status}"), status.is_server_error() || status.as_u16() == 429));
        }
        let body: JudgeResponse = resp.json().map_err(|e| err(e.to_string(), false))?;
        Ok(body
            .completions
            .first()
            .map(|c| extract_judgment(c))
            .unwrap_or(HintOutcome::NotApplicable))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreverifyOutcome {
    pub hints: BTreeMap<PairId, PreverifyHint>,
    /// Subjective pairs; never sent to the verifier.
    pub skipped_subjective: Vec<PairId>,
    /// Verifier errors; these tasks are served without hints.
    pub failed: Vec<PairId>,
}

/// Pre-verifies the objective pairs in `pairs`, up to `max_in_flight` at a
/// time. Output does not depend on scheduling.
pub fn preverify_batch(
    pairs: &[(PreferencePair, AttributeSet)],
    verifier: &dyn ResponseVerifier,
    max_in_flight: usize,
) -> PreverifyOutcome {
    let mut out = PreverifyOutcome::default();
    let objective: Vec<&PreferencePair> = pairs
        .iter()
        .filter_map(|(p, a)| {
            if a.objectivity == Objectivity::Objective {
                Some(p)
            } else {
                out.skipped_subjective.push(p.id.clone());
                None
            }
        })
        .collect();
    let slots: Vec<Mutex<Option<Result<PreverifyHint, JudgeError>>>> =
        objective.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..max_in_flight.clamp(1, objective.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = objective.get(i) else { break };
                let r = verifier.verify(&p.conversation, &p.chosen).and_then(|chosen| {
                    Ok(PreverifyHint {
                        pair_id: p.id.clone(),
                        chosen,
                        rejected: verifier.verify(&p.conversation, &p.rejected)?,
                        model_id: verifier.model_id().to_string(),
                    })
                });
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    for (p, slot) in objective.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every slot filled") {
            Ok(h) => {
                out.hints.insert(p.id.clone(), h);
            }
            Err(e) => {
                log::warn!("pre-verification of {} failed: {e}", p.id);
                out.failed.push(p.id.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair::Controversiality;

    fn item(q: &str, good: &str, bad: &str, objectivity: Objectivity) -> (PreferencePair, AttributeSet) {
        let p = PreferencePair::new(vec![Turn::user(q)], good, bad, "t").unwrap();
        let a = AttributeSet {
            pair_id: p.id.clone(),
            task_category: "math".into(),
            objectivity,
            controversiality: Controversiality::Low,
            desired_attributes: vec!["correct".into()],
            annotation_guideline: "check the arithmetic".into(),
        };
        (p, a)
    }

    struct Down;

    impl ResponseVerifier for Down {
        fn model_id(&self) -> &str {
            "down"
        }
        fn verify(&self, _: &[Turn], _: &str) -> Result<HintOutcome, JudgeError> {
            Err(JudgeError::Provider {
                model_id: "down".into(),
                message: "connection refused".into(),
                retryable: true,
            })
        }
    }

    #[test]
    fn judgment_reads_the_last_line() {
        assert_eq!(extract_judgment("2+2 is 4.\nCorrect\n\n"), HintOutcome::Correct);
        assert_eq!(extract_judgment("Incorrect"), HintOutcome::Incorrect);
        assert_eq!(extract_judgment("Correct!\n"), HintOutcome::NotApplicable);
        assert_eq!(extract_judgment(""), HintOutcome::NotApplicable);
    }

    #[test]
    fn math_pair_gets_one_hint_per_response() {
        let key = HashMap::from([("4".to_string(), true), ("5".to_string(), false)]);
        let v = StubVerifier::new("stub", key);
        let pairs = vec![item("2+2?", "4", "5", Objectivity::Objective)];
        let out = preverify_batch(&pairs, &v, 4);
        let h = &out.hints[&pairs[0].0.id];
        assert_eq!((h.chosen, h.rejected), (HintOutcome::Correct, HintOutcome::Incorrect));
    }

    #[test]
    fn subjective_pairs_are_not_sent() {
        let v = StubVerifier::new("stub", HashMap::new());
        let pairs = vec![item("a poem?", "x", "y", Objectivity::Subjective)];
        let out = preverify_batch(&pairs, &v, 4);
        assert!(out.hints.is_empty());
        assert_eq!(out.skipped_subjective, vec![pairs[0].0.id.clone()]);
    }

    #[test]
    fn failures_leave_hints_absent() {
        let pairs = vec![item("2+2?", "4", "5", Objectivity::Objective)];
        let out = preverify_batch(&pairs, &Down, 2);
        assert!(out.hints.is_empty());
        assert_eq!(out.failed.len(), 1);
    }

    #[test]
    fn hint_serializes_with_short_na() {
        let h = serde_json::to_string(&HintOutcome::NotApplicable).unwrap();
        assert_eq!(h, "\"n/a\"");
    }
}
