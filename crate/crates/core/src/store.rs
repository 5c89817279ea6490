//! In-memory pair store: pair content, attributes and embeddings keyed by id.

use std::collections::BTreeMap;

use crate::btrm::EmbeddedPair;
use crate::embed::PairEmbeddings;
use crate::pair::{AttributeSet, PairId, PreferencePair};

#[derive(Clone, Debug, Default)]
pub struct PairStore {
    pairs: BTreeMap<PairId, PreferencePair>,
    attrs: BTreeMap<PairId, AttributeSet>,
    embeddings: BTreeMap<PairId, PairEmbeddings>,
}

impl PairStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pair: PreferencePair) {
        self.pairs.insert(pair.id.clone(), pair);
    }

    pub fn set_attrs(&mut self, attrs: AttributeSet) {
        self.attrs.insert(attrs.pair_id.clone(), attrs);
    }

    pub fn set_embeddings(&mut self, id: PairId, e: PairEmbeddings) {
        self.embeddings.insert(id, e);
    }

    pub fn get(&self, id: &PairId) -> Option<&PreferencePair> {
        self.pairs.get(id)
    }

    pub fn attrs(&self, id: &PairId) -> Option<&AttributeSet> {
        self.attrs.get(id)
    }

    pub fn embeddings(&self, id: &PairId) -> Option<&PairEmbeddings> {
        self.embeddings.get(id)
    }

    pub fn embedded_pair(&self, id: &PairId) -> Option<EmbeddedPair> {
        self.embeddings
            .get(id)
            .map(|e| EmbeddedPair::new(e.chosen.clone(), e.rejected.clone()))
    }

    pub fn contains(&self, id: &PairId) -> bool {
        self.pairs.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs in ascending id order.
    pub fn pairs(&self) -> impl Iterator<Item = &PreferencePair> {
        self.pairs.values()
    }

    pub fn all_attrs(&self) -> impl Iterator<Item = &AttributeSet> {
        self.attrs.values()
    }

    pub fn all_embeddings(&self) -> impl Iterator<Item = (&PairId, &PairEmbeddings)> {
        self.embeddings.iter()
    }

    /// Swaps chosen and rejected in the stored pair and its embeddings.
    /// The id is kept. Returns false if the pair is unknown.
    pub fn swap_orientation(&mut self, id: &PairId) -> bool {
        let Some(p) = self.pairs.get_mut(id) else {
            return false;
        };
        p.swap_orientation();
        if let Some(e) = self.embeddings.get_mut(id) {
            e.swap_orientation();
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedding;
    use crate::pair::Turn;

    #[test]
    fn swap_moves_text_and_vectors_together() {
        let p = PreferencePair::new(vec![Turn::user("q")], "a", "b", "t").unwrap();
        let id = p.id.clone();
        let mut s = PairStore::new();
        s.insert(p);
        s.set_embeddings(
            id.clone(),
            PairEmbeddings {
                context: Embedding::new(vec![0.0, 1.0]),
                chosen: Embedding::new(vec![1.0, 0.0]),
                rejected: Embedding::new(vec![0.0, 1.0]),
            },
        );
        assert!(s.swap_orientation(&id));
        assert_eq!(s.get(&id).unwrap().chosen, "b");
        assert_eq!(s.embedded_pair(&id).unwrap().chosen.values(), &[0.0, 1.0]);
        assert_eq!(s.get(&id).unwrap().id, id);
        assert!(!s.swap_orientation(&"nope".into()));
    }
}
