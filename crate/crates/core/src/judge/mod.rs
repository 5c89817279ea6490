//! Preference-aware LLM labeling.
//!
//! A judge sees the annotation guideline, up to eight gold exemplars with
//! their human labels, and the target pair with its responses presented as
//! "Candidate 1" / "Candidate 2" in a seeded random order. Each model is
//! sampled several times; votes are mapped back through the presentation
//! permutation, reduced by majority within a model (self-consistency), then
//! by majority across models. Ties abstain at both levels and an abstained
//! pair is discarded.

mod label;
mod preverify;
mod provider;
mod task;

pub use preverify::{
    extract_judgment, preverify_batch, verify_prompt, HintOutcome, HttpVerifier, PreverifyHint,
    PreverifyOutcome, ResponseVerifier, StubVerifier,
};
pub use label::{apply_labels, label_batch, Decision, LabelConfig, LabelCounts, LabelOutcome};
pub use provider::{
    HttpJudge, JudgeProvider, PreferenceOracle, StubJudge, TrustLabels, ENV_JUDGE_KEY,
    ENV_JUDGE_URL,
};
pub use task::{assemble_task, Exemplar, JudgeTask, MAX_EXEMPLARS};

use serde::{Deserialize, Serialize};

use crate::pair::PairId;

/// One sampled answer, in presentation terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Candidate1,
    Candidate2,
    Unsure,
}

/// How the target pair was laid out in the prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permutation {
    /// Candidate 1 is the stored chosen response.
    Identity,
    /// Candidate 1 is the stored rejected response.
    Swapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVerdict {
    ChosenStands,
    Swap,
    Abstain,
}

impl Permutation {
    /// Orientation verdict implied by a candidate vote.
    pub fn resolve(self, vote: Vote) -> ModelVerdict {
        match (vote, self) {
            (Vote::Unsure, _) => ModelVerdict::Abstain,
            (Vote::Candidate1, Permutation::Identity) | (Vote::Candidate2, Permutation::Swapped) => {
                ModelVerdict::ChosenStands
            }
            (Vote::Candidate1, Permutation::Swapped) | (Vote::Candidate2, Permutation::Identity) => {
                ModelVerdict::Swap
            }
        }
    }

    /// Candidate that expresses a verdict under this layout.
    pub fn present(self, verdict: ModelVerdict) -> Vote {
        match (verdict, self) {
            (ModelVerdict::Abstain, _) => Vote::Unsure,
            (ModelVerdict::ChosenStands, Permutation::Identity)
            | (ModelVerdict::Swap, Permutation::Swapped) => Vote::Candidate1,
            (ModelVerdict::ChosenStands, Permutation::Swapped)
            | (ModelVerdict::Swap, Permutation::Identity) => Vote::Candidate2,
        }
    }
}

/// Parses a completion under the answer contract: the last non-blank line
/// must be exactly `Candidate 1`, `Candidate 2` or `Unsure`. Anything else
/// counts as unsure.
pub fn extract_vote(text: &str) -> Vote {
    match text.lines().rev().map(str::trim).find(|l| !l.is_empty()) {
        Some("Candidate 1") => Vote::Candidate1,
        Some("Candidate 2") => Vote::Candidate2,
        _ => Vote::Unsure,
    }
}

fn majority(a: usize, b: usize, on_a: ModelVerdict, on_b: ModelVerdict) -> ModelVerdict {
    use std::cmp::Ordering::*;
    match a.cmp(&b) {
        Greater => on_a,
        Less => on_b,
        Equal => ModelVerdict::Abstain,
    }
}

/// Self-consistency within one model: drop unsure votes, take the majority
/// candidate, map it through the permutation. No votes or a tie abstains.
pub fn intra_model_aggregate(samples: &[Vote], permutation: Permutation) -> ModelVerdict {
    let c1 = samples.iter().filter(|v| **v == Vote::Candidate1).count();
    let c2 = samples.iter().filter(|v| **v == Vote::Candidate2).count();
    majority(
        c1,
        c2,
        permutation.resolve(Vote::Candidate1),
        permutation.resolve(Vote::Candidate2),
    )
}

/// Majority across models after dropping abstentions; ties abstain.
pub fn cross_model_merge(verdicts: &[ModelVerdict]) -> ModelVerdict {
    let stands = verdicts
        .iter()
        .filter(|v| **v == ModelVerdict::ChosenStands)
        .count();
    let swaps = verdicts.iter().filter(|v| **v == ModelVerdict::Swap).count();
    majority(stands, swaps, ModelVerdict::ChosenStands, ModelVerdict::Swap)
}

/// One line of the verdict log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub pair_id: PairId,
    pub model_id: String,
    pub permutation: Permutation,
    pub samples: Vec<Vote>,
    pub model_verdict: ModelVerdict,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JudgeError {
    #[error("pair {0} has no attribute set")]
    MissingAttributes(PairId),
    #[error("pair {0} is not in the store")]
    UnknownPair(PairId),
    #[error("judge provider {model_id} failed: {message}")]
    Provider {
        model_id: String,
        message: String,
        retryable: bool,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use Vote::*;

    #[test]
    fn intra_model_examples() {
        assert_eq!(
            intra_model_aggregate(&[Candidate1, Candidate1, Candidate2], Permutation::Identity),
            ModelVerdict::ChosenStands
        );
        assert_eq!(
            intra_model_aggregate(&[Candidate1, Candidate1, Candidate2], Permutation::Swapped),
            ModelVerdict::Swap
        );
        assert_eq!(
            intra_model_aggregate(&[Candidate1, Candidate2], Permutation::Identity),
            ModelVerdict::Abstain
        );
        assert_eq!(
            intra_model_aggregate(&[Unsure, Unsure], Permutation::Identity),
            ModelVerdict::Abstain
        );
        assert_eq!(
            intra_model_aggregate(&[Unsure, Candidate2], Permutation::Identity),
            ModelVerdict::Swap
        );
    }

    #[test]
    fn cross_model_examples() {
        use ModelVerdict::*;
        assert_eq!(cross_model_merge(&[ChosenStands, ChosenStands, Swap]), ChosenStands);
        assert_eq!(cross_model_merge(&[ChosenStands, Swap]), Abstain);
        assert_eq!(cross_model_merge(&[Abstain, Abstain]), Abstain);
        assert_eq!(cross_model_merge(&[Abstain, Swap]), Swap);
    }

    #[test]
    fn permutation_round_trip() {
        for perm in [Permutation::Identity, Permutation::Swapped] {
            for v in [Candidate1, Candidate2, Unsure] {
                assert_eq!(perm.present(perm.resolve(v)), v);
            }
        }
    }

    #[test]
    fn answer_extraction_contract() {
        assert_eq!(extract_vote("Reasoning...\nCandidate 2\n"), Candidate2);
        assert_eq!(extract_vote("Candidate 1"), Candidate1);
        assert_eq!(extract_vote("I think Candidate 1"), Unsure);
        assert_eq!(extract_vote("Candidate 1 is better\nUnsure"), Unsure);
        assert_eq!(extract_vote(""), Unsure);
        assert_eq!(extract_vote("candidate 1"), Unsure);
    }
}
