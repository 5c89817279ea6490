//! Synthetic preference worlds.
//!
//! Responses are random unit vectors; a hidden unit direction `u` defines
//! utility, so the true preference between two responses is the sign of
//! `u·(a - b)`. Contexts are noisy copies of per-category centres, which
//! gives retrieval something to find. Labels in the seed and unverified
//! pools are corrupted by a noise model; the held-out and validation sets
//! are always clean.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::btrm::EmbeddedPair;
use crate::embed::{Embedding, PairEmbeddings};
use crate::hash::derive_seed;
use crate::judge::PreferenceOracle;
use crate::pair::{AttributeSet, Controversiality, Objectivity, PairId, PreferencePair, Turn};
use crate::store::PairStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Each label flips independently with probability `rate`.
    Uniform,
    /// Flips only pairs whose better response scores lower on a hidden
    /// spurious direction, with probability `2·rate`. The expected flip
    /// fraction is still `rate`, but the noise now points somewhere, so a
    /// model fit to raw labels is pulled toward the spurious direction.
    Biased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub rng_seed: u64,
    pub dim: usize,
    pub categories: usize,
    pub label_noise_rate: f64,
    pub noise_model: NoiseModel,
    pub seed_pairs: usize,
    pub unverified_pairs: usize,
    pub heldout_pairs: usize,
    pub validation_pairs: usize,
    /// Pairs with `|u·(a - b)|` below this are resampled.
    pub min_margin: f64,
    /// Scale of per-pair noise around the category centre.
    pub context_spread: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            rng_seed: 0,
            dim: 32,
            categories: 4,
            label_noise_rate: 0.3,
            noise_model: NoiseModel::Uniform,
            seed_pairs: 400,
            unverified_pairs: 4_000,
            heldout_pairs: 2_000,
            validation_pairs: 500,
            min_margin: 0.0,
            context_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("dim must be >= 2")]
    Dim,
    #[error("need at least one category")]
    Categories,
    #[error("noise rate {0} is outside [0, 1) (or above 0.5 for biased noise)")]
    NoiseRate(f64),
    #[error("min_margin {0} is not reachable")]
    Margin(f64),
}

/// Utility of every response text, so truth survives flips and swaps.
#[derive(Clone, Debug, Default)]
pub struct WorldOracle {
    utility: HashMap<String, f64>,
}

impl WorldOracle {
    pub fn utility(&self, text: &str) -> Option<f64> {
        self.utility.get(text).copied()
    }
}

impl PreferenceOracle for WorldOracle {
    fn chosen_is_better(&self, pair: &PreferencePair) -> Option<bool> {
        Some(self.utility(&pair.chosen)? > self.utility(&pair.rejected)?)
    }
}

pub struct World {
    pub spec: WorldSpec,
    pub utility: Embedding,
    pub spurious: Embedding,
    /// Seed and unverified pairs with attributes and embeddings.
    pub store: PairStore,
    pub seed_ids: Vec<PairId>,
    pub unverified_ids: Vec<PairId>,
    /// Pairs whose stored orientation disagrees with the truth.
    pub mislabeled: BTreeSet<PairId>,
    /// Clean pairs in true orientation for measuring accuracy.
    pub heldout: Vec<EmbeddedPair>,
    /// Clean pairs standing in for a frozen sanity-check file.
    pub validation: Vec<EmbeddedPair>,
    pub oracle: Arc<WorldOracle>,
}

fn unit<R: Rng>(rng: &mut R, dim: usize) -> Embedding {
    loop {
        // Box-Muller keeps the direction uniform on the sphere.
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        if let Some(e) = Embedding::normalized(v) {
            return e;
        }
    }
}

struct Axes {
    dim: usize,
    u: Embedding,
    s: Embedding,
    margin: f64,
}

impl Axes {
    /// Two responses, better first.
    fn draw<R: Rng>(&self, rng: &mut R) -> (Embedding, Embedding) {
        loop {
            let a = unit(rng, self.dim);
            let b = unit(rng, self.dim);
            let d = self.u.dot(&a) - self.u.dot(&b);
            if d.abs() >= self.margin.max(1e-12) {
                return if d > 0.0 { (a, b) } else { (b, a) };
            }
        }
    }
}

fn check(spec: &WorldSpec) -> Result<(), WorldError> {
    if spec.dim < 2 {
        return Err(WorldError::Dim);
    }
    if spec.categories == 0 {
        return Err(WorldError::Categories);
    }
    let max = match spec.noise_model {
        NoiseModel::Uniform => 1.0,
        NoiseModel::Biased => 0.5,
    };
    let r = spec.label_noise_rate;
    if !(0.0..max).contains(&r) && !(r == 0.5 && max == 0.5) {
        return Err(WorldError::NoiseRate(r));
    }
    if !(spec.min_margin >= 0.0 && spec.min_margin < 1.0) {
        return Err(WorldError::Margin(spec.min_margin));
    }
    Ok(())
}

const PROMPT_FLAVOURS: [&str; 4] = [
    "Explain the following step by step",
    "Write a short answer to this question",
    "Help me with this task",
    "Give your opinion on this topic",
];

/// Builds a world. The same spec always yields the same world; each part
/// draws from its own stream, so resizing one pool leaves the others alone.
pub fn generate_world(spec: &WorldSpec) -> Result<World, WorldError> {
    check(spec)?;
    let stream = |k: &str| ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, k));
    let mut axes_rng = stream("axes");
    let u = unit(&mut axes_rng, spec.dim);
    let s = loop {
        let r = unit(&mut axes_rng, spec.dim);
        let proj = r.dot(&u);
        let v: Vec<f64> = r.values().iter().zip(u.values()).map(|(x, y)| x - proj * y).collect();
        if let Some(e) = Embedding::normalized(v) {
            break e;
        }
    };
    let axes = Axes {
        dim: spec.dim,
        u: u.clone(),
        s: s.clone(),
        margin: spec.min_margin,
    };
    let centres: Vec<Embedding> = {
        let mut r = stream("centres");
        (0..spec.categories).map(|_| unit(&mut r, spec.dim)).collect()
    };

    let mut store = PairStore::new();
    let mut oracle = WorldOracle::default();
    let mut mislabeled = BTreeSet::new();
    let mut pools = Vec::new();
    for (pool, n) in [("seed", spec.seed_pairs), ("unverified", spec.unverified_pairs)] {
        let mut rng = stream(pool);
        let mut ids = Vec::with_capacity(n);
        for k in 0..n {
            let cat = rng.random_range(0..spec.categories);
            let (better, worse) = axes.draw(&mut rng);
            let flip_p = match spec.noise_model {
                NoiseModel::Uniform => spec.label_noise_rate,
                NoiseModel::Biased if axes.s.dot(&better) < axes.s.dot(&worse) => {
                    2.0 * spec.label_noise_rate
                }
                NoiseModel::Biased => 0.0,
            };
            let flip = rng.random_bool(flip_p.min(1.0));
            let noise = unit(&mut rng, spec.dim);
            let ctx: Vec<f64> = centres[cat]
                .values()
                .iter()
                .zip(noise.values())
                .map(|(c, z)| c + spec.context_spread * z)
                .collect();
            let context = Embedding::normalized(ctx).unwrap_or_else(|| centres[cat].clone());

            let tag = format!("{}:{pool}:{k}", spec.rng_seed);
            let (good_text, bad_text) = (format!("response {tag}:a"), format!("response {tag}:b"));
            oracle.utility.insert(good_text.clone(), u.dot(&better));
            oracle.utility.insert(bad_text.clone(), u.dot(&worse));
            let prompt = format!(
                "{} (category {cat}, item {tag})",
                PROMPT_FLAVOURS[cat % PROMPT_FLAVOURS.len()]
            );
            let (chosen, rejected, ce, re) = if flip {
                (bad_text, good_text, worse, better)
            } else {
                (good_text, bad_text, better, worse)
            };
            let pair = PreferencePair::new(vec![Turn::user(prompt)], chosen, rejected, "synthetic")
                .expect("synthetic pairs are well formed");
            let id = pair.id.clone();
            if flip {
                mislabeled.insert(id.clone());
            }
            store.set_attrs(AttributeSet {
                pair_id: id.clone(),
                task_category: format!("cat{cat}"),
                objectivity: if cat % 2 == 0 {
                    Objectivity::Objective
                } else {
                    Objectivity::Subjective
                },
                controversiality: [
                    Controversiality::Low,
                    Controversiality::Medium,
                    Controversiality::High,
                ][k % 3],
                desired_attributes: vec!["higher utility".into()],
                annotation_guideline: "Prefer the response with higher hidden utility.".into(),
            });
            store.set_embeddings(
                id.clone(),
                PairEmbeddings {
                    context,
                    chosen: ce,
                    rejected: re,
                },
            );
            store.insert(pair);
            ids.push(id);
        }
        pools.push(ids);
    }
    let unverified_ids = pools.pop().expect("two pools");
    let seed_ids = pools.pop().expect("two pools");

    let clean = |key: &str, n: usize| {
        let mut rng = stream(key);
        (0..n)
            .map(|_| {
                let (a, b) = axes.draw(&mut rng);
                EmbeddedPair::new(a, b)
            })
            .collect::<Vec<_>>()
    };
    let heldout = clean("heldout", spec.heldout_pairs);
    let validation = clean("validation", spec.validation_pairs);

    Ok(World {
        spec: spec.clone(),
        utility: u,
        spurious: s,
        store,
        seed_ids,
        unverified_ids,
        mislabeled,
        heldout,
        validation,
        oracle: Arc::new(oracle),
    })
}

impl World {
    /// Extra clean pairs in true orientation from a named stream, with their
    /// own utility margin (0 admits near-ties the pools never contain).
    pub fn clean_pairs(&self, key: &str, n: usize, margin: f64) -> Vec<EmbeddedPair> {
        let axes = Axes {
            dim: self.spec.dim,
            u: self.utility.clone(),
            s: self.spurious.clone(),
            margin,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.spec.rng_seed, &format!("clean/{key}")));
        (0..n)
            .map(|_| {
                let (a, b) = axes.draw(&mut rng);
                EmbeddedPair::new(a, b)
            })
            .collect()
    }

    /// Fraction of the given ids whose stored label is wrong.
    pub fn mislabeled_fraction(&self, ids: &[PairId]) -> f64 {
        if ids.is_empty() {
            return 0.0;
        }
        ids.iter().filter(|id| self.mislabeled.contains(*id)).count() as f64 / ids.len() as f64
    }
}
