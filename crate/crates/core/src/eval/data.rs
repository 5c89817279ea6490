//! Eval-set files and reports.
//!
//! One JSON object per line, either a pairwise record
//! `{category, weight?, conversation, chosen, rejected}` or a best-of-N
//! record `{category, prompt_group_id, conversation, candidates: [{text, correct}]}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bon_curve, category_accuracy, BonCandidate, BonGroup, CurvePoint, EvalError, PairwiseItem,
    Scorer,
};
use crate::embed::{canonical_response, EmbedError, EmbeddingProvider};
use crate::jsonl::{self, JsonlError};
use crate::pair::Turn;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalRecord {
    Bon {
        category: String,
        prompt_group_id: String,
        conversation: Vec<Turn>,
        candidates: Vec<CandidateRecord>,
    },
    Pairwise {
        category: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<f64>,
        conversation: Vec<Turn>,
        chosen: String,
        rejected: String,
    },
}

#[derive(Clone, Debug, Default)]
pub struct EvalFile {
    pub name: String,
    pub records: Vec<EvalRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalFileError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("group {0} appears more than once")]
    DuplicateGroup(String),
    #[error("group {0} has fewer than two candidates")]
    SmallGroup(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub fn load_eval_set(path: &Path) -> Result<EvalFile, EvalFileError> {
    let records: Vec<EvalRecord> = jsonl::read(path)?;
    let mut groups = std::collections::BTreeSet::new();
    for r in &records {
        if let EvalRecord::Bon {
            prompt_group_id,
            candidates,
            ..
        } = r
        {
            if !groups.insert(prompt_group_id.clone()) {
                return Err(EvalFileError::DuplicateGroup(prompt_group_id.clone()));
            }
            if candidates.len() < 2 {
                return Err(EvalFileError::SmallGroup(prompt_group_id.clone()));
            }
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(EvalFile { name, records })
}

/// Embeds every response in the file with the same canonical text the
/// training pipeline uses.
pub fn embed_eval_set(
    file: &EvalFile,
    provider: &dyn EmbeddingProvider,
) -> Result<(Vec<PairwiseItem>, Vec<BonGroup>), EvalFileError> {
    let mut texts = Vec::new();
    for r in &file.records {
        match r {
            EvalRecord::Pairwise {
                conversation,
                chosen,
                rejected,
                ..
            } => {
                texts.push(canonical_response(conversation, chosen));
                texts.push(canonical_response(conversation, rejected));
            }
            EvalRecord::Bon {
                conversation,
                candidates,
                ..
            } => texts.extend(candidates.iter().map(|c| canonical_response(conversation, &c.text))),
        }
    }
    let vecs = provider.embed_batch(&texts)?;
    if vecs.len() != texts.len() {
        return Err(EmbedError::Count {
            want: texts.len(),
            got: vecs.len(),
        }
        .into());
    }
    let mut it = vecs.into_iter();
    let mut pairs = Vec::new();
    let mut groups = Vec::new();
    for r in &file.records {
        match r {
            EvalRecord::Pairwise {
                category, weight, ..
            } => pairs.push(PairwiseItem {
                category: category.clone(),
                weight: weight.unwrap_or(1.0),
                chosen: it.next().expect("counted"),
                rejected: it.next().expect("counted"),
            }),
            EvalRecord::Bon {
                category,
                prompt_group_id,
                candidates,
                ..
            } => groups.push(BonGroup {
                id: prompt_group_id.clone(),
                category: category.clone(),
                candidates: candidates
                    .iter()
                    .map(|c| BonCandidate {
                        embedding: it.next().expect("counted"),
                        correct: c.correct,
                    })
                    .collect(),
            }),
        }
    }
    groups.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((pairs, groups))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub set: String,
    pub pairs: usize,
    pub groups: usize,
    pub per_category: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bon_curve: Vec<CurvePoint>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut s = format!("eval set {}: {} pairs, {} BoN groups\n", self.set, self.pairs, self.groups);
        for (cat, acc) in &self.per_category {
            let _ = writeln!(s, "  {cat:<24} {acc:.4}");
        }
        if let Some(o) = self.overall {
            let _ = writeln!(s, "  {:<24} {o:.4}", "overall");
        }
        for p in &self.bon_curve {
            let _ = writeln!(s, "  best-of-{:<16} {:.4}", p.n, p.hit_rate);
        }
        s
    }
}

/// Pairwise accuracy plus, when BoN groups are present, the curve over
/// `n_grid` (truncated to the smallest group size).
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    name: &str,
    pairs: &[PairwiseItem],
    groups: &[BonGroup],
    n_grid: &[usize],
) -> Result<EvalReport, EvalError> {
    let (per_category, overall) = if pairs.is_empty() {
        (BTreeMap::new(), None)
    } else {
        let acc = category_accuracy(scorer, pairs)?;
        (acc.per_category, Some(acc.overall))
    };
    let curve = match groups.iter().map(|g| g.candidates.len()).min() {
        Some(max_n) => {
            let grid: Vec<usize> = n_grid.iter().copied().filter(|n| *n <= max_n).collect();
            if grid.is_empty() {
                Vec::new()
            } else {
                bon_curve(scorer, groups, &grid)?
            }
        }
        None => Vec::new(),
    };
    Ok(EvalReport {
        set: name.to_string(),
        pairs: pairs.len(),
        groups: groups.len(),
        per_category,
        overall,
        bon_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;

    #[test]
    fn parses_both_record_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"category":"chat","conversation":[{"role":"user","content":"hi"}],"chosen":"hello","rejected":"go away"}"#,
                "\n",
                r#"{"category":"math","weight":2.0,"conversation":[{"role":"user","content":"1+1"}],"chosen":"2","rejected":"3"}"#,
                "\n",
                r#"{"category":"math","prompt_group_id":"g1","conversation":[{"role":"user","content":"2+2"}],"candidates":[{"text":"4","correct":true},{"text":"5","correct":false}]}"#,
                "\n"
            ),
        )
        .unwrap();
        let f = load_eval_set(&path).unwrap();
        assert_eq!(f.name, "bench");
        assert_eq!(f.records.len(), 3);
        assert!(matches!(f.records[1], EvalRecord::Pairwise { weight: Some(w), .. } if w == 2.0));
        let (pairs, groups) = embed_eval_set(&f, &HashingEmbedder::new(32)).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].candidates.len(), 2);
    }

    #[test]
    fn rejects_single_candidate_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.jsonl");
        std::fs::write(
            &path,
            r#"{"category":"m","prompt_group_id":"g","conversation":[{"role":"user","content":"q"}],"candidates":[{"text":"a","correct":true}]}"#,
        )
        .unwrap();
        assert!(matches!(load_eval_set(&path), Err(EvalFileError::SmallGroup(_))));
    }
}
