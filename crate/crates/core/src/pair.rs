//! Preference pairs and their LLM-generated attribute sets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hash;

/// Stable pair identifier.
///
/// Ingestion derives it from the dedup key, so the same
/// (conversation, chosen, rejected) triple always receives the same id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairId(pub String);

impl PairId {
    pub fn new(s: impl Into<String>) -> Self {
        PairId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PairId {
    fn from(s: &str) -> Self {
        PairId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One (conversation, chosen, rejected) instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: PairId,
    pub conversation: Vec<Turn>,
    pub chosen: String,
    pub rejected: String,
    pub source: String,
    /// Unix seconds; 0 when the input carried no timestamp.
    #[serde(default)]
    pub created_at: i64,
    /// Set on pairs produced by flip recycling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flipped_from: Option<PairId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PairError {
    #[error("conversation is empty")]
    EmptyConversation,
    #[error("final conversation turn must have role user")]
    FinalTurnNotUser,
    #[error("chosen and rejected responses are identical")]
    IdenticalResponses,
}

impl PreferencePair {
    /// Builds a pair whose id is derived from its dedup key.
    pub fn new(
        conversation: Vec<Turn>,
        chosen: impl Into<String>,
        rejected: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self, PairError> {
        let mut pair = PreferencePair {
            id: PairId::new(""),
            conversation,
            chosen: chosen.into(),
            rejected: rejected.into(),
            source: source.into(),
            created_at: 0,
            flipped_from: None,
        };
        pair.validate()?;
        pair.id = pair.derived_id();
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), PairError> {
        match self.conversation.last() {
            None => return Err(PairError::EmptyConversation),
            Some(t) if t.role != Role::User => return Err(PairError::FinalTurnNotUser),
            _ => {}
        }
        if self.chosen.as_bytes() == self.rejected.as_bytes() {
            return Err(PairError::IdenticalResponses);
        }
        Ok(())
    }

    /// Global dedup key over (conversation history, chosen, rejected).
    ///
    /// Fields are length-prefixed so no two distinct triples serialize alike.
    pub fn dedup_key(&self) -> [u8; 32] {
        let mut buf = Vec::new();
        let mut put = |s: &[u8]| {
            buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
            buf.extend_from_slice(s);
        };
        put(&(self.conversation.len() as u64).to_le_bytes());
        for t in &self.conversation {
            put(t.role.as_str().as_bytes());
            put(t.content.as_bytes());
        }
        put(self.chosen.as_bytes());
        put(self.rejected.as_bytes());
        hash::sha256(&buf)
    }

    pub fn derived_id(&self) -> PairId {
        PairId(format!("p{}", &hex::encode(self.dedup_key())[..16]))
    }

    /// Text of the first user turn, the part checked for benchmark overlap.
    pub fn first_user_turn(&self) -> Option<&str> {
        self.conversation
            .iter()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }

    /// Exchanges chosen and rejected in place.
    pub fn swap_orientation(&mut self) {
        std::mem::swap(&mut self.chosen, &mut self.rejected);
    }

    /// A new pair with the opposite orientation and a fresh id.
    pub fn flipped(&self) -> PreferencePair {
        let mut p = self.clone();
        p.swap_orientation();
        p.flipped_from = Some(self.id.clone());
        p.id = p.derived_id();
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objectivity {
    Objective,
    Subjective,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controversiality {
    Low,
    Medium,
    High,
}

impl fmt::Display for Objectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objectivity::Objective => "objective",
            Objectivity::Subjective => "subjective",
        })
    }
}

impl fmt::Display for Controversiality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Controversiality::Low => "low",
            Controversiality::Medium => "medium",
            Controversiality::High => "high",
        })
    }
}

/// The five preference attributes attached to a pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub pair_id: PairId,
    pub task_category: String,
    pub objectivity: Objectivity,
    pub controversiality: Controversiality,
    pub desired_attributes: Vec<String>,
    pub annotation_guideline: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttributeError {
    #[error("task_category is empty")]
    EmptyCategory,
    #[error("desired_attributes is empty")]
    NoDesiredAttributes,
    #[error("annotation_guideline is empty")]
    EmptyGuideline,
}

impl AttributeSet {
    pub fn validate(&self) -> Result<(), AttributeError> {
        if self.task_category.trim().is_empty() {
            return Err(AttributeError::EmptyCategory);
        }
        if self.desired_attributes.iter().all(|a| a.trim().is_empty()) {
            return Err(AttributeError::NoDesiredAttributes);
        }
        if self.annotation_guideline.trim().is_empty() {
            return Err(AttributeError::EmptyGuideline);
        }
        Ok(())
    }
}
