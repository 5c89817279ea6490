//! Context and response embeddings plus exact cosine top-k.

mod cache;
mod index;
mod remote;

pub use cache::{read_cache, write_cache, CacheError, EmbeddingCache};
pub use index::{IndexError, SimilarityIndex};
pub use remote::RemoteEmbedder;

use crate::hash::stable_hash64;
use crate::pair::{AttributeSet, PreferencePair, Turn};

pub const DEFAULT_DIM: usize = 256;

/// A dense vector. Providers return L2-normalized vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    /// Normalizes `values` to unit L2 norm. Returns `None` for zero or
    /// non-finite input.
    pub fn normalized(values: Vec<f64>) -> Option<Self> {
        let mut e = Embedding(values);
        let n = e.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        e.0.iter_mut().for_each(|v| *v /= n);
        Some(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding provider failed: {message}")]
    Provider { message: String, retryable: bool },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("provider returned {got} vectors for {want} inputs")]
    Count { want: usize, got: usize },
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Provider { retryable: true, .. })
    }
}

/// Something that maps canonical text to unit vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError>;
}

/// Offline provider: signed feature hashing of character 3..=5-grams.
///
/// A pure function of its input string; used by every offline test.
#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
    tag: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashingEmbedder {
            dim,
            tag: format!("hashing-char3-5/{dim}"),
        }
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = String::new();
        for n in 3..=5 {
            if chars.len() < n {
                continue;
            }
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                let h = stable_hash64(buf.as_bytes());
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                v[(h % self.dim as u64) as usize] += sign;
            }
        }
        Embedding::normalized(v).unwrap_or_else(|| {
            // Too short for any n-gram (or all features cancelled): fall back
            // to a one-hot on the whole-string hash.
            let mut one = vec![0.0; self.dim];
            one[(stable_hash64(text.as_bytes()) % self.dim as u64) as usize] = 1.0;
            Embedding(one)
        })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

fn push_turns(out: &mut String, turns: &[Turn]) {
    for t in turns {
        out.push_str(t.role.as_str());
        out.push_str(": ");
        out.push_str(&t.content);
        out.push('\n');
    }
}

/// Canonical text for a (conversation, attributes) context: role-tagged
/// turns, one per line, then the five attribute fields in fixed order.
/// `None` renders the attribute fields empty.
pub fn canonical_context(conversation: &[Turn], attrs: Option<&AttributeSet>) -> String {
    let mut s = String::new();
    push_turns(&mut s, conversation);
    let (cat, obj, con, desired, guide) = match attrs {
        Some(a) => (
            a.task_category.clone(),
            a.objectivity.to_string(),
            a.controversiality.to_string(),
            a.desired_attributes.join("; "),
            a.annotation_guideline.clone(),
        ),
        None => Default::default(),
    };
    s.push_str(&format!("task_category: {cat}\n"));
    s.push_str(&format!("objectivity: {obj}\n"));
    s.push_str(&format!("controversiality: {con}\n"));
    s.push_str(&format!("desired_attributes: {desired}\n"));
    s.push_str(&format!("annotation_guideline: {guide}\n"));
    s
}

/// Canonical text for one response: the conversation followed by the
/// response as an assistant turn, with empty attributes.
pub fn canonical_response(conversation: &[Turn], response: &str) -> String {
    let mut turns = conversation.to_vec();
    turns.push(Turn::assistant(response));
    canonical_context(&turns, None)
}

/// Embeds the (x, a) context of a pair.
pub fn embed_context(
    pair: &PreferencePair,
    attrs: Option<&AttributeSet>,
    provider: &dyn EmbeddingProvider,
) -> Result<Embedding, EmbedError> {
    let text = canonical_context(&pair.conversation, attrs);
    let mut out = provider.embed_batch(std::slice::from_ref(&text))?;
    match out.pop() {
        Some(e) if e.dim() == provider.dim() => Ok(e),
        Some(e) => Err(EmbedError::DimMismatch {
            expected: provider.dim(),
            actual: e.dim(),
        }),
        None => Err(EmbedError::Count { want: 1, got: 0 }),
    }
}

/// Embeddings needed to curate one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbeddings {
    /// (conversation, attributes)
    pub context: Embedding,
    pub chosen: Embedding,
    pub rejected: Embedding,
}

impl PairEmbeddings {
    pub fn swap_orientation(&mut self) {
        std::mem::swap(&mut self.chosen, &mut self.rejected);
    }
}

/// Embeds context and both responses for a batch of pairs.
pub fn embed_pairs(
    pairs: &[(&PreferencePair, Option<&AttributeSet>)],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<PairEmbeddings>, EmbedError> {
    let mut texts = Vec::with_capacity(pairs.len() * 3);
    for (p, a) in pairs {
        texts.push(canonical_context(&p.conversation, *a));
        texts.push(canonical_response(&p.conversation, &p.chosen));
        texts.push(canonical_response(&p.conversation, &p.rejected));
    }
    let vecs = provider.embed_batch(&texts)?;
    if vecs.len() != texts.len() {
        return Err(EmbedError::Count {
            want: texts.len(),
            got: vecs.len(),
        });
    }
    if let Some(bad) = vecs.iter().find(|v| v.dim() != provider.dim()) {
        return Err(EmbedError::DimMismatch {
            expected: provider.dim(),
            actual: bad.dim(),
        });
    }
    let mut it = vecs.into_iter();
    Ok((0..pairs.len())
        .map(|_| PairEmbeddings {
            context: it.next().expect("counted"),
            chosen: it.next().expect("counted"),
            rejected: it.next().expect("counted"),
        })
        .collect())
}
