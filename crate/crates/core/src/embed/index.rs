use std::cmp::Ordering;
use std::collections::HashSet;

use super::Embedding;
use crate::pair::PairId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("duplicate pair id {0} in index")]
    DuplicateId(PairId),
}

/// Exact-scan cosine index. Immutable once built; queries take `&self`.
#[derive(Clone, Debug)]
pub struct SimilarityIndex {
    dim: usize,
    entries: Vec<(PairId, Embedding)>,
    ids: HashSet<PairId>,
}

/// Descending score, then ascending id.
fn rank(a: &(f64, &PairId), b: &(f64, &PairId)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl SimilarityIndex {
    pub fn new(dim: usize) -> Self {
        SimilarityIndex {
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn build(
        dim: usize,
        entries: impl IntoIterator<Item = (PairId, Embedding)>,
    ) -> Result<Self, IndexError> {
        let mut idx = Self::new(dim);
        for (id, e) in entries {
            idx.insert(id, e)?;
        }
        Ok(idx)
    }

    pub fn insert(&mut self, id: PairId, e: Embedding) -> Result<(), IndexError> {
        if e.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: e.dim(),
            });
        }
        if !self.ids.insert(id.clone()) {
            return Err(IndexError::DuplicateId(id));
        }
        self.entries.push((id, e));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &PairId) -> bool {
        self.ids.contains(id)
    }

    pub fn entries(&self) -> &[(PairId, Embedding)] {
        &self.entries
    }

    /// Exact top-k by cosine, descending; ties by ascending id.
    /// Returns `min(k, len)` entries.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<(PairId, f64)>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, &PairId)> = self
            .entries
            .iter()
            .map(|(id, e)| (query.cosine(e), id))
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_by(rank);
        Ok(scored.into_iter().map(|(s, id)| (id.clone(), s)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64) -> Embedding {
        // Cosine with [1, 0] equals x.
        Embedding::new(vec![x, (1.0 - x * x).sqrt()])
    }

    #[test]
    fn top_two_in_order() {
        let idx = SimilarityIndex::build(
            2,
            [("c", 0.1), ("a", 0.9), ("b", 0.5)]
                .into_iter()
                .map(|(id, x)| (PairId::from(id), unit(x))),
        )
        .unwrap();
        let got = idx.top_k(&unit(1.0), 2).unwrap();
        let ids: Vec<_> = got.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert!((got[0].1 - 0.9).abs() < 1e-12);
        assert!(idx.top_k(&unit(1.0), 0).unwrap().is_empty());
        assert_eq!(idx.top_k(&unit(1.0), 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_by_id() {
        let idx = SimilarityIndex::build(
            2,
            [("z", 0.5), ("m", 0.5)]
                .into_iter()
                .map(|(id, x)| (PairId::from(id), unit(x))),
        )
        .unwrap();
        let got = idx.top_k(&unit(0.5), 2).unwrap();
        assert_eq!(got[0].0.as_str(), "m");
        assert_eq!(got[1].0.as_str(), "z");
    }

    #[test]
    fn dim_and_duplicate_errors() {
        let mut idx = SimilarityIndex::new(2);
        idx.insert("a".into(), unit(0.3)).unwrap();
        assert!(matches!(
            idx.insert("a".into(), unit(0.3)),
            Err(IndexError::DuplicateId(_))
        ));
        assert!(matches!(
            idx.insert("b".into(), Embedding::new(vec![1.0])),
            Err(IndexError::DimMismatch { .. })
        ));
        assert!(idx.top_k(&Embedding::new(vec![1.0, 0.0, 0.0]), 1).is_err());
    }
}
