//! Reward-model measurement: per-category pairwise accuracy, best-of-N,
//! and cross-benchmark Pearson correlation. [`world`] generates the
//! synthetic preference worlds used to exercise the pipeline end to end.

mod data;
pub mod world;

pub use data::{embed_eval_set, evaluate, load_eval_set, EvalFile, EvalRecord, EvalReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::btrm::{sigmoid, RewardModel};
use crate::embed::Embedding;
use crate::hash::stable_hash64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    Empty,
    #[error("category {0} has zero total weight")]
    EmptyCategory(String),
    #[error("weight {0} is not a positive finite number")]
    BadWeight(f64),
    #[error("n = {n} is outside 1..={size}")]
    BadN { n: usize, size: usize },
    #[error("n grid must be non-empty and strictly ascending")]
    BadGrid,
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("score table row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("scorer failed: {0}")]
    Scorer(String),
}

/// Anything that assigns a scalar reward to a response embedding.
pub trait Scorer {
    fn reward(&self, e: &Embedding) -> Result<f64, EvalError>;
}

impl Scorer for RewardModel {
    fn reward(&self, e: &Embedding) -> Result<f64, EvalError> {
        self.score(e).map_err(|err| EvalError::Scorer(err.to_string()))
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&Embedding) -> f64> Scorer for FnScorer<F> {
    fn reward(&self, e: &Embedding) -> Result<f64, EvalError> {
        Ok((self.0)(e))
    }
}

/// Uniform pseudo-random rewards in [0, 1), a pure function of the seed and
/// the embedding's bits. The random-selection baseline for best-of-N.
#[derive(Clone, Copy, Debug)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn reward(&self, e: &Embedding) -> Result<f64, EvalError> {
        let mut bytes = self.seed.to_le_bytes().to_vec();
        for v in e.values() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        Ok((stable_hash64(&bytes) >> 11) as f64 / (1u64 << 53) as f64)
    }
}

/// One pairwise evaluation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseItem {
    pub category: String,
    pub weight: f64,
    pub chosen: Embedding,
    pub rejected: Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub per_category: BTreeMap<String, f64>,
    /// Unweighted mean across categories.
    pub overall: f64,
}

/// Weighted pairwise accuracy within each category, then the plain mean
/// across categories. A pair counts as correct when `σ(r_w - r_l) > 0.5`.
pub fn category_accuracy<S: Scorer + ?Sized>(
    scorer: &S,
    items: &[PairwiseItem],
) -> Result<CategoryAccuracy, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for it in items {
        if !(it.weight.is_finite() && it.weight >= 0.0) {
            return Err(EvalError::BadWeight(it.weight));
        }
        let d = scorer.reward(&it.chosen)? - scorer.reward(&it.rejected)?;
        let e = sums.entry(&it.category).or_default();
        e.1 += it.weight;
        if sigmoid(d) > 0.5 {
            e.0 += it.weight;
        }
    }
    let mut per_category = BTreeMap::new();
    for (cat, (hit, total)) in sums {
        if total <= 0.0 {
            return Err(EvalError::EmptyCategory(cat.to_string()));
        }
        per_category.insert(cat.to_string(), hit / total);
    }
    let overall = per_category.values().sum::<f64>() / per_category.len() as f64;
    Ok(CategoryAccuracy {
        per_category,
        overall,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BonCandidate {
    pub embedding: Embedding,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BonGroup {
    pub id: String,
    pub category: String,
    pub candidates: Vec<BonCandidate>,
}

/// Index of the highest reward; the lowest index wins ties.
pub fn argmax_first(rewards: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rewards.iter().enumerate() {
        if best.is_none_or(|b| *r > rewards[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores the first `n` candidates and reports whether the argmax is correct.
pub fn best_of_n<S: Scorer + ?Sized>(
    scorer: &S,
    group: &BonGroup,
    n: usize,
) -> Result<bool, EvalError> {
    if n == 0 || n > group.candidates.len() {
        return Err(EvalError::BadN {
            n,
            size: group.candidates.len(),
        });
    }
    let rewards = group.candidates[..n]
        .iter()
        .map(|c| scorer.reward(&c.embedding))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = argmax_first(&rewards).expect("n >= 1");
    Ok(group.candidates[pick].correct)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub hit_rate: f64,
}

/// Mean best-of-n hit rate over all groups for each n in the grid.
pub fn bon_curve<S: Scorer + ?Sized>(
    scorer: &S,
    groups: &[BonGroup],
    n_grid: &[usize],
) -> Result<Vec<CurvePoint>, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadGrid);
    }
    n_grid
        .iter()
        .map(|&n| {
            let mut hits = 0usize;
            for g in groups {
                hits += best_of_n(scorer, g, n)? as usize;
            }
            Ok(CurvePoint {
                n,
                hit_rate: hits as f64 / groups.len() as f64,
            })
        })
        .collect()
}

/// Expected best-of-n hit rate of a uniformly random selector: the mean over
/// groups of the correct fraction among the first `n` candidates.
pub fn random_bon_expectation(groups: &[BonGroup], n: usize) -> f64 {
    let total: f64 = groups
        .iter()
        .map(|g| g.candidates[..n].iter().filter(|c| c.correct).count() as f64 / n as f64)
        .sum();
    total / groups.len() as f64
}

/// Sample Pearson correlation. `None` when either side has zero variance or
/// fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Benchmark-by-benchmark Pearson matrix for a models × benchmarks table.
/// Entries involving a zero-variance column are `None`; the rest of the
/// diagonal is exactly 1 and the matrix is exactly symmetric.
pub fn pearson_matrix(table: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>, EvalError> {
    if table.len() < 2 {
        return Err(EvalError::TooFewModels(table.len()));
    }
    let k = table[0].len();
    for (row, r) in table.iter().enumerate() {
        if r.len() != k {
            return Err(EvalError::Ragged {
                row,
                len: r.len(),
                expected: k,
            });
        }
    }
    let cols: Vec<Vec<f64>> = (0..k).map(|j| table.iter().map(|r| r[j]).collect()).collect();
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        m[i][i] = pearson(&cols[i], &cols[i]).map(|_| 1.0);
        for j in i + 1..k {
            let r = pearson(&cols[i], &cols[j]);
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(x: f64) -> Embedding {
        Embedding::new(vec![x])
    }

    fn identity() -> FnScorer<impl Fn(&Embedding) -> f64> {
        FnScorer(|e: &Embedding| e.values()[0])
    }

    fn item(cat: &str, w: f64, correct: bool) -> PairwiseItem {
        let (c, r) = if correct { (1.0, 0.0) } else { (0.0, 1.0) };
        PairwiseItem {
            category: cat.into(),
            weight: w,
            chosen: e(c),
            rejected: e(r),
        }
    }

    #[test]
    fn category_accuracy_examples() {
        let s = identity();
        let oracle = category_accuracy(&s, &[item("a", 1.0, true), item("b", 1.0, true)]).unwrap();
        assert_eq!(oracle.overall, 1.0);

        let two = [
            item("a", 1.0, true),
            item("b", 1.0, true),
            item("b", 1.0, false),
        ];
        assert_eq!(category_accuracy(&s, &two).unwrap().overall, 0.75);

        let weighted = [item("a", 2.0, true), item("a", 1.0, false)];
        let acc = category_accuracy(&s, &weighted).unwrap();
        assert!((acc.per_category["a"] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn category_accuracy_errors() {
        let s = identity();
        assert_eq!(category_accuracy(&s, &[]), Err(EvalError::Empty));
        assert_eq!(
            category_accuracy(&s, &[item("a", 0.0, true)]),
            Err(EvalError::EmptyCategory("a".into()))
        );
        assert!(matches!(
            category_accuracy(&s, &[item("a", -1.0, true)]),
            Err(EvalError::BadWeight(_))
        ));
    }

    fn group(rewards: &[f64], correct: &[bool]) -> BonGroup {
        BonGroup {
            id: "g".into(),
            category: "c".into(),
            candidates: rewards
                .iter()
                .zip(correct)
                .map(|(r, c)| BonCandidate {
                    embedding: e(*r),
                    correct: *c,
                })
                .collect(),
        }
    }

    #[test]
    fn best_of_n_examples() {
        let s = identity();
        let g = group(&[0.1, 0.9, 0.3], &[false, true, false]);
        assert!(best_of_n(&s, &g, 3).unwrap());
        assert!(!best_of_n(&s, &g, 1).unwrap());
        assert!(best_of_n(&s, &g, 0).is_err());
        assert!(best_of_n(&s, &g, 4).is_err());
        // Ties go to the lowest index.
        let tie = group(&[0.5, 0.5], &[true, false]);
        assert!(best_of_n(&s, &tie, 2).unwrap());
    }

    #[test]
    fn bon_curve_rejects_bad_grids() {
        let s = identity();
        let g = [group(&[0.1, 0.9], &[false, true])];
        assert_eq!(bon_curve(&s, &g, &[]), Err(EvalError::BadGrid));
        assert_eq!(bon_curve(&s, &g, &[2, 1]), Err(EvalError::BadGrid));
        assert!(matches!(bon_curve(&s, &g, &[1, 3]), Err(EvalError::BadN { .. })));
        let c = bon_curve(&s, &g, &[1, 2]).unwrap();
        assert_eq!(c[0].hit_rate, 0.0);
        assert_eq!(c[1].hit_rate, 1.0);
    }

    #[test]
    fn pearson_examples() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn pearson_matrix_marks_undefined_columns() {
        let t = vec![vec![1.0, 5.0, 1.0], vec![2.0, 5.0, 2.0], vec![3.0, 5.0, 4.0]];
        let m = pearson_matrix(&t).unwrap();
        assert_eq!(m[0][0], Some(1.0));
        assert_eq!(m[1][1], None);
        assert_eq!(m[0][1], None);
        assert_eq!(m[0][2], m[2][0]);
        assert!(matches!(pearson_matrix(&t[..1]), Err(EvalError::TooFewModels(1))));
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(pearson_matrix(&ragged), Err(EvalError::Ragged { .. })));
    }
}
