//! Raw record ingestion: structural check, global dedup, benchmark
//! decontamination.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hash::stable_hash64;
use crate::pair::{
    AttributeSet, Controversiality, Objectivity, PairError, PairId, PreferencePair, Role, Turn,
};

pub const NGRAM_SIZE: usize = 13;
pub const TOKENIZER_VERSION: &str = "ws-lower-strip-punct/1";

/// Why a raw record did not become a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Malformed,
    NullContent,
    EmptyConversation,
    InvalidRole,
    FinalTurnNotUser,
    IdenticalResponses,
    InvalidAttributes,
    Duplicate,
    Contaminated,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::Malformed => "malformed",
            RejectReason::NullContent => "null-content",
            RejectReason::EmptyConversation => "empty-conversation",
            RejectReason::InvalidRole => "invalid-role",
            RejectReason::FinalTurnNotUser => "final-turn-not-user",
            RejectReason::IdenticalResponses => "identical-responses",
            RejectReason::InvalidAttributes => "invalid-attributes",
            RejectReason::Duplicate => "duplicate",
            RejectReason::Contaminated => "contaminated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Rejection {
            reason,
            detail: detail.into(),
        }
    }
}

/// One line of the rejection report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    /// Pair id when the record got far enough to have one, else `line:<n>`.
    pub key: String,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_window: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// A structurally valid record.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub pair: PreferencePair,
    pub attrs: Option<AttributeSet>,
}

fn content_of(v: Option<&Value>, what: &str) -> Result<String, Rejection> {
    match v {
        None | Some(Value::Null) => Err(Rejection::new(
            RejectReason::NullContent,
            format!("{what} is null"),
        )),
        Some(Value::String(s)) if s.trim().is_empty() => Err(Rejection::new(
            RejectReason::NullContent,
            format!("{what} is empty"),
        )),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Rejection::new(
            RejectReason::Malformed,
            format!("{what} is not a string"),
        )),
    }
}

/// Validates a raw record and normalizes it into a pair.
///
/// Expected shape: `{conversation: [{role, content}], chosen, rejected, source}`
/// with optional `created_at` (unix seconds) and an optional inline
/// `attributes` object carrying the five attribute fields.
pub fn structural_check(raw: &Value) -> Result<Ingested, Rejection> {
    let obj = raw
        .as_object()
        .ok_or_else(|| Rejection::new(RejectReason::Malformed, "record is not an object"))?;
    let turns = match obj.get("conversation") {
        Some(Value::Array(a)) => a,
        Some(_) => {
            return Err(Rejection::new(
                RejectReason::Malformed,
                "conversation is not a list",
            ))
        }
        None => {
            return Err(Rejection::new(
                RejectReason::Malformed,
                "missing conversation",
            ))
        }
    };
    let mut conversation = Vec::with_capacity(turns.len());
    for (i, t) in turns.iter().enumerate() {
        let t = t.as_object().ok_or_else(|| {
            Rejection::new(RejectReason::Malformed, format!("turn {i} is not an object"))
        })?;
        let role = match t.get("role").and_then(Value::as_str) {
            Some("user") => Role::User,
            Some("assistant") => Role::Assistant,
            Some(other) => {
                return Err(Rejection::new(
                    RejectReason::InvalidRole,
                    format!("turn {i} has role {other:?}"),
                ))
            }
            None => {
                return Err(Rejection::new(
                    RejectReason::Malformed,
                    format!("turn {i} has no role"),
                ))
            }
        };
        let content = content_of(t.get("content"), &format!("turn {i} content"))?;
        conversation.push(Turn { role, content });
    }
    let chosen = content_of(obj.get("chosen"), "chosen")?;
    let rejected = content_of(obj.get("rejected"), "rejected")?;
    let source = match obj.get("source") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Rejection::new(RejectReason::Malformed, "source is not a string")),
    };
    let created_at = obj.get("created_at").and_then(Value::as_i64).unwrap_or(0);

    let mut pair = PreferencePair::new(conversation, chosen, rejected, source).map_err(|e| {
        let reason = match e {
            PairError::EmptyConversation => RejectReason::EmptyConversation,
            PairError::FinalTurnNotUser => RejectReason::FinalTurnNotUser,
            PairError::IdenticalResponses => RejectReason::IdenticalResponses,
        };
        Rejection::new(reason, e.to_string())
    })?;
    pair.created_at = created_at;

    let attrs = match obj.get("attributes") {
        None | Some(Value::Null) => None,
        Some(a) => Some(parse_attributes(a, &pair.id)?),
    };
    Ok(Ingested { pair, attrs })
}

#[derive(Deserialize)]
struct RawAttributes {
    task_category: String,
    objectivity: Objectivity,
    controversiality: Controversiality,
    desired_attributes: Vec<String>,
    annotation_guideline: String,
}

fn parse_attributes(v: &Value, id: &PairId) -> Result<AttributeSet, Rejection> {
    let raw: RawAttributes = serde_json::from_value(v.clone())
        .map_err(|e| Rejection::new(RejectReason::InvalidAttributes, e.to_string()))?;
    let attrs = AttributeSet {
        pair_id: id.clone(),
        task_category: raw.task_category,
        objectivity: raw.objectivity,
        controversiality: raw.controversiality,
        desired_attributes: raw.desired_attributes,
        annotation_guideline: raw.annotation_guideline,
    };
    attrs
        .validate()
        .map_err(|e| Rejection::new(RejectReason::InvalidAttributes, e.to_string()))?;
    Ok(attrs)
}

/// Global deduplication on (conversation history, chosen, rejected).
#[derive(Clone, Debug, Default)]
pub struct Deduper {
    seen: HashSet<[u8; 32]>,
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pre-loads keys of pairs that already exist (e.g. earlier ingests).
    pub fn with_existing<'a>(pairs: impl IntoIterator<Item = &'a PreferencePair>) -> Self {
        let mut d = Self::new();
        for p in pairs {
            d.seen.insert(p.dedup_key());
        }
        d
    }

    /// True when `pair` is the first occurrence of its key.
    pub fn admit(&mut self, pair: &PreferencePair) -> bool {
        self.seen.insert(pair.dedup_key())
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Keeps the first occurrence of each key, preserving survivor order.
/// Returns the survivors and the number of dropped duplicates.
pub fn dedup<I>(pairs: I) -> (Vec<PreferencePair>, usize)
where
    I: IntoIterator<Item = PreferencePair>,
{
    let mut d = Deduper::new();
    let mut dups = 0;
    let kept = pairs
        .into_iter()
        .filter(|p| {
            let keep = d.admit(p);
            dups += usize::from(!keep);
            keep
        })
        .collect();
    (kept, dups)
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '“' | '”' | '‘' | '’' | '«' | '»' | '—' | '–' | '…' | '¿' | '¡' | '·' | '。' | '，' | '、'
        )
}

/// Lowercase, split on unicode whitespace, strip leading/trailing
/// punctuation per token, drop tokens that become empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(is_punct).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn window_key(tokens: &[String]) -> u64 {
    stable_hash64(tokens.join(" ").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContaminationError {
    #[error("benchmark corpus is empty")]
    EmptyCorpus,
    #[error("index built with tokenizer {index}, current tokenizer is {current}")]
    TokenizerMismatch { index: String, current: String },
}

/// Hashed n-gram keys built from benchmark prompts.
#[derive(Clone, Debug)]
pub struct ContaminationIndex {
    pub ngram_size: usize,
    pub grams: HashSet<u64>,
    /// Lengths of prompts shorter than `ngram_size`; each contributed one
    /// whole-prompt key of that length.
    pub short_lengths: BTreeSet<usize>,
    pub tokenizer_version: String,
}

impl ContaminationIndex {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// First window of `text` that hits the index, as joined token text.
    pub fn first_hit(&self, text: &str) -> Option<String> {
        let tokens = tokenize(text);
        let lengths = std::iter::once(self.ngram_size).chain(self.short_lengths.iter().copied());
        for n in lengths {
            if n == 0 || tokens.len() < n {
                continue;
            }
            if let Some(w) = tokens.windows(n).find(|w| self.grams.contains(&window_key(w))) {
                return Some(w.join(" "));
            }
        }
        None
    }
}

/// Indexes every consecutive 13-token window of every prompt. Prompts with
/// fewer tokens contribute their whole token sequence as a single key.
pub fn build_contamination_index<S: AsRef<str>>(
    prompts: &[S],
) -> Result<ContaminationIndex, ContaminationError> {
    if prompts.is_empty() {
        return Err(ContaminationError::EmptyCorpus);
    }
    let mut grams = HashSet::new();
    let mut short_lengths = BTreeSet::new();
    for p in prompts {
        let tokens = tokenize(p.as_ref());
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < NGRAM_SIZE {
            short_lengths.insert(tokens.len());
            grams.insert(window_key(&tokens));
        } else {
            grams.extend(tokens.windows(NGRAM_SIZE).map(window_key));
        }
    }
    Ok(ContaminationIndex {
        ngram_size: NGRAM_SIZE,
        grams,
        short_lengths,
        tokenizer_version: TOKENIZER_VERSION.to_string(),
    })
}

/// A pair removed by decontamination, with the window that matched.
#[derive(Clone, Debug, PartialEq)]
pub struct Contaminated {
    pub pair: PreferencePair,
    pub matched_window: String,
}

/// Splits pairs into (clean, removed). A pair is removed iff its first user
/// turn contains at least one indexed window.
pub fn decontaminate(
    pairs: Vec<PreferencePair>,
    index: &ContaminationIndex,
) -> Result<(Vec<PreferencePair>, Vec<Contaminated>), ContaminationError> {
    if index.tokenizer_version != TOKENIZER_VERSION {
        return Err(ContaminationError::TokenizerMismatch {
            index: index.tokenizer_version.clone(),
            current: TOKENIZER_VERSION.to_string(),
        });
    }
    let mut clean = Vec::with_capacity(pairs.len());
    let mut removed = Vec::new();
    for pair in pairs {
        match pair.first_user_turn().and_then(|t| index.first_hit(t)) {
            Some(w) => removed.push(Contaminated {
                pair,
                matched_window: w,
            }),
            None => clean.push(pair),
        }
    }
    Ok((clean, removed))
}
