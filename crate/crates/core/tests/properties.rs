#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use proptest::prelude::*;

use prefcurate::btrm::{sigmoid, EmbeddedPair};
use prefcurate::curate::{consistent, recycle_flipped, stage2_confidence_filter, stage2_consistency_retain};
use prefcurate::eval::{bon_curve, category_accuracy, pearson, pearson_matrix, BonCandidate, BonGroup, FnScorer, PairwiseItem};
use prefcurate::ingest::{build_contamination_index, decontaminate, dedup, tokenize, Deduper, NGRAM_SIZE};
use prefcurate::judge::ModelVerdict;
use prefcurate::ledger::{Ledger, Outcome, Pool, Reason, Verdict};
use prefcurate::retrieval::dynamic_k;
use prefcurate::store::PairStore;
use prefcurate::{Arch, Embedding, PairId, PreferencePair, RewardModel, SimilarityIndex, Turn};

fn vec_of(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
}

fn emb(dim: usize) -> impl Strategy<Value = Embedding> {
    vec_of(dim).prop_map(Embedding::new)
}

fn pair(i: usize, prompt: &str) -> PreferencePair {
    PreferencePair::new(vec![Turn::user(prompt)], format!("good {i}"), format!("bad {i}"), "prop").unwrap()
}

// Exact-set reference for the hashed 13-gram index.
fn exact_contaminated(prompt: &str, corpus: &[String]) -> bool {
    let mut grams: HashSet<Vec<String>> = HashSet::new();
    for b in corpus {
        let t = tokenize(b);
        if t.is_empty() {
            continue;
        }
        if t.len() < NGRAM_SIZE {
            grams.insert(t);
        } else {
            grams.extend(t.windows(NGRAM_SIZE).map(|w| w.to_vec()));
        }
    }
    let lengths: BTreeSet<usize> = grams.iter().map(Vec::len).collect();
    let t = tokenize(prompt);
    lengths
        .iter()
        .any(|&n| t.len() >= n && t.windows(n).any(|w| grams.contains(w)))
}

fn words(rng_words: &[u16], prefix: &str) -> String {
    rng_words.iter().map(|w| format!("{prefix}{w}")).collect::<Vec<_>>().join(" ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigmoid_is_antisymmetric(x in -50.0f64..50.0) {
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_a_pair_complements_p(w in vec_of(6), a in emb(6), b in emb(6)) {
        let m = RewardModel::linear(w);
        let p = m.predict(&a, &b).unwrap();
        let q = m.predict(&b, &a).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_p_ignores_a_shared_shift(w in vec_of(6), a in vec_of(6), b in vec_of(6), s in vec_of(6)) {
        let m = RewardModel::linear(w);
        let shift = |v: &[f64]| Embedding::new(v.iter().zip(&s).map(|(x, y)| x + y).collect());
        let p = m.predict(&Embedding::new(a.clone()), &Embedding::new(b.clone())).unwrap();
        let q = m.predict(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((p - q).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences(
        seed in any::<u64>(),
        mlp in any::<bool>(),
        batch in prop::collection::vec((vec_of(5), vec_of(5)), 1..6),
    ) {
        use rand::SeedableRng;
        let arch = if mlp { Arch::Mlp { hidden_dim: 4 } } else { Arch::Linear };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = RewardModel::init(arch, 5, &mut rng);
        for (i, p) in m.params.iter_mut().enumerate() {
            *p += 0.1 * ((seed.wrapping_add(i as u64) % 17) as f64 / 17.0 - 0.5);
        }
        let pairs: Vec<EmbeddedPair> = batch
            .into_iter()
            .map(|(a, b)| EmbeddedPair::new(Embedding::new(a), Embedding::new(b)))
            .collect();
        let (_, grad) = m.pairwise_loss(&pairs).unwrap();
        let h = 1e-5;
        for i in 0..m.params.len() {
            let mut up = m.clone();
            up.params[i] += h;
            let mut down = m.clone();
            down.params[i] -= h;
            let num = (up.mean_loss(&pairs).unwrap() - down.mean_loss(&pairs).unwrap()) / (2.0 * h);
            let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
            prop_assert!(rel < 1e-4, "param {i}: analytic {} numeric {num}", grad[i]);
        }
    }

    #[test]
    fn dynamic_k_stays_in_range(p in 0.0f64..=1.0, k_max in 1usize..64) {
        let k = dynamic_k(p, k_max).unwrap();
        prop_assert!(k <= k_max);
        if p <= 0.5 {
            prop_assert_eq!(k, k_max);
        }
        // less confident never retrieves less
        let k2 = dynamic_k(p * 0.9, k_max).unwrap();
        prop_assert!(k2 >= k);
    }

    #[test]
    fn top_k_matches_brute_force(
        entries in prop::collection::vec(vec_of(4), 1..40),
        query in vec_of(4),
        k in 0usize..50,
    ) {
        // coarse values so exact cosine ties actually occur
        let round = |v: &[f64]| Embedding::new(v.iter().map(|x| (x * 2.0).round() / 2.0).collect());
        let items: Vec<(PairId, Embedding)> = entries
            .iter()
            .enumerate()
            .map(|(i, v)| (PairId::new(format!("id{i:03}")), round(v)))
            .collect();
        let q = round(&query);
        let idx = SimilarityIndex::build(4, items.clone()).unwrap();
        let got = idx.top_k(&q, k).unwrap();
        let mut all: Vec<(PairId, f64)> = items.iter().map(|(id, e)| (id.clone(), q.cosine(e))).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        prop_assert_eq!(got, all);
    }

    #[test]
    fn dedup_is_idempotent(picks in prop::collection::vec(0usize..12, 0..40)) {
        let pairs: Vec<PreferencePair> = picks.iter().map(|&i| pair(i, &format!("prompt {}", i % 5))).collect();
        let (once, dropped) = dedup(pairs.clone());
        let (twice, dropped2) = dedup(once.clone());
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(dropped2, 0);
        prop_assert_eq!(once.len() + dropped, pairs.len());
        let distinct: HashSet<usize> = picks.iter().copied().collect();
        prop_assert_eq!(once.len(), distinct.len());
    }

    #[test]
    fn hashed_decontamination_matches_exact_sets(
        corpus in prop::collection::vec(prop::collection::vec(0u16..30, 5..25), 1..6),
        prompts in prop::collection::vec(prop::collection::vec(0u16..30, 0..30), 1..20),
    ) {
        // a tiny vocabulary makes accidental overlaps common
        let corpus: Vec<String> = corpus.iter().map(|w| words(w, "w")).collect();
        let index = build_contamination_index(&corpus).unwrap();
        let pairs: Vec<PreferencePair> = prompts
            .iter()
            .enumerate()
            .map(|(i, w)| pair(i, &format!("q{i} {}", words(w, "w"))))
            .collect();
        let expected: BTreeSet<PairId> = pairs
            .iter()
            .filter(|p| exact_contaminated(p.first_user_turn().unwrap(), &corpus))
            .map(|p| p.id.clone())
            .collect();
        let (clean, removed) = decontaminate(pairs.clone(), &index).unwrap();
        let got: BTreeSet<PairId> = removed.iter().map(|c| c.pair.id.clone()).collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(clean.len() + removed.len(), pairs.len());
        let (again, removed_again) = decontaminate(clean.clone(), &index).unwrap();
        prop_assert_eq!(again, clean);
        prop_assert!(removed_again.is_empty());
    }

    #[test]
    fn flip_then_flip_adds_nothing(n in 1usize..20) {
        let originals: Vec<PreferencePair> = (0..n).map(|i| pair(i, "x")).collect();
        let mut seen = Deduper::with_existing(&originals);
        let (flipped, dropped) = recycle_flipped(&originals, &mut seen);
        prop_assert_eq!(flipped.len(), n);
        prop_assert_eq!(dropped, 0);
        let (back, dropped_back) = recycle_flipped(&flipped, &mut seen);
        prop_assert!(back.is_empty());
        prop_assert_eq!(dropped_back, n);
    }

    #[test]
    fn pearson_matrix_is_symmetric_with_unit_diagonal(
        table in (2usize..6, 3usize..9).prop_flat_map(|(m, b)| prop::collection::vec(vec_of(b), m)),
    ) {
        let mat = pearson_matrix(&table).unwrap();
        for i in 0..mat.len() {
            if let Some(d) = mat[i][i] {
                prop_assert!((d - 1.0).abs() <= 1e-12);
            }
            for j in 0..mat.len() {
                prop_assert_eq!(mat[i][j], mat[j][i]);
                if let Some(r) = mat[i][j] {
                    prop_assert!((-1.0..=1.0).contains(&r));
                }
            }
        }
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(x in vec_of(8), y in vec_of(8), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let r = pearson(&x, &y);
        let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        match (r, pearson(&x2, &y)) {
            (Some(r), Some(r2)) => prop_assert!((r - r2).abs() < 1e-9),
            (None, None) => {}
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn category_accuracy_ignores_item_order(
        items in prop::collection::vec((0usize..4, 0.1f64..3.0, vec_of(3), vec_of(3)), 1..30),
        w in vec_of(3),
        rot in 0usize..30,
    ) {
        let m = RewardModel::linear(w);
        let mut items: Vec<PairwiseItem> = items
            .into_iter()
            .map(|(c, weight, a, b)| PairwiseItem {
                category: format!("c{c}"),
                weight,
                chosen: Embedding::new(a),
                rejected: Embedding::new(b),
            })
            .collect();
        let a = category_accuracy(&m, &items).unwrap();
        items.reverse();
        let len = items.len();
        items.rotate_left(rot % len);
        let b = category_accuracy(&m, &items).unwrap();
        prop_assert_eq!(a.per_category.len(), b.per_category.len());
        for (k, v) in &a.per_category {
            prop_assert!((v - b.per_category[k]).abs() < 1e-12);
        }
        prop_assert!((a.overall - b.overall).abs() < 1e-12);
    }

    #[test]
    fn oracle_best_of_n_never_gets_worse_with_n(
        groups in prop::collection::vec(prop::collection::vec(any::<bool>(), 8), 1..20),
    ) {
        let groups: Vec<BonGroup> = groups
            .iter()
            .enumerate()
            .map(|(g, flags)| BonGroup {
                id: format!("g{g}"),
                category: "c".into(),
                candidates: flags
                    .iter()
                    .enumerate()
                    .map(|(i, &correct)| BonCandidate {
                        embedding: Embedding::new(vec![f64::from(u8::from(correct)), i as f64]),
                        correct,
                    })
                    .collect(),
            })
            .collect();
        let oracle = FnScorer(|e: &Embedding| e.values()[0]);
        let curve = bon_curve(&oracle, &groups, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].hit_rate >= w[0].hit_rate);
        }
        // hit whenever a correct candidate is within reach
        for pt in &curve {
            let reachable = groups.iter().filter(|g| g.candidates[..pt.n].iter().any(|c| c.correct)).count();
            prop_assert!((pt.hit_rate - reachable as f64 / groups.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_is_monotone_in_gold_p(
        g1 in 0.0f64..=1.0,
        g2 in 0.0f64..=1.0,
        best in 0.0f64..=1.0,
        judge in prop::option::of(prop::sample::select(vec![
            ModelVerdict::ChosenStands,
            ModelVerdict::Swap,
            ModelVerdict::Abstain,
        ])),
    ) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        if consistent(lo, best, judge) {
            prop_assert!(consistent(hi, best, judge));
        }
    }

    #[test]
    fn stage2_splits_partition_the_pool(
        vecs in prop::collection::vec((vec_of(3), vec_of(3)), 0..60),
        wb in vec_of(3),
        wg in vec_of(3),
    ) {
        let mut store = PairStore::new();
        let mut ids = Vec::new();
        for (i, (a, b)) in vecs.into_iter().enumerate() {
            let p = pair(i, "stage2");
            ids.push(p.id.clone());
            store.insert(p.clone());
            store.set_embeddings(p.id.clone(), prefcurate::embed::PairEmbeddings {
                context: Embedding::new(vec![1.0, 0.0, 0.0]),
                chosen: Embedding::new(a),
                rejected: Embedding::new(b),
            });
        }
        let best = RewardModel::linear(wb);
        let gold = RewardModel::linear(wg);
        let (pass, queue) = stage2_confidence_filter(&best, &ids, &store).unwrap();
        let (kept, dropped) = stage2_consistency_retain(&gold, &best, None, &ids, &store).unwrap();
        for (x, y) in [(&pass, &queue), (&kept, &dropped)] {
            let xs: BTreeSet<_> = x.iter().collect();
            let ys: BTreeSet<_> = y.iter().collect();
            prop_assert!(xs.is_disjoint(&ys));
            let union: BTreeSet<_> = xs.union(&ys).copied().collect();
            prop_assert_eq!(union, ids.iter().collect::<BTreeSet<_>>());
        }
    }

    #[test]
    fn ledger_replay_reproduces_membership(ops in prop::collection::vec((0usize..8, 0u8..6), 0..60)) {
        let mut ledger = Ledger::new();
        let ids: Vec<PairId> = (0..8).map(|i| PairId::new(format!("p{i}"))).collect();
        for id in &ids {
            ledger.admit(id, 0).unwrap();
        }
        for (iter, (i, op)) in ops.into_iter().enumerate() {
            let id = &ids[i];
            let from = ledger.pool_of(id).unwrap();
            let iteration = iter as u32 + 1;
            // illegal moves are rejected without side effects; that is fine here
            let _ = match op {
                0 => ledger
                    .record_verdict(Verdict::human(id.clone(), "a", Outcome::Confirm))
                    .map(|_| ())
                    .and_then(|_| ledger.transition(id, from, Pool::Gold, Reason::HumanConfirm, iteration).map(|_| ())),
                1 => ledger.transition(id, from, Pool::Silver, Reason::JudgeLabel, iteration).map(|_| ()),
                2 => ledger.transition(id, from, Pool::Discarded, Reason::ConsistencyFail, iteration).map(|_| ()),
                3 => ledger.transition(id, from, Pool::Retained, Reason::ConfidencePass, iteration).map(|_| ()),
                4 => ledger.transition(id, from, Pool::Gold, Reason::HumanSwap, iteration).map(|_| ()),
                _ => ledger.transition(id, Pool::Unverified, Pool::Silver, Reason::JudgeSwap, iteration).map(|_| ()),
            };
        }
        let replayed = Ledger::replay(ledger.verdicts().to_vec(), ledger.events().to_vec()).unwrap();
        for pool in Pool::ALL {
            prop_assert_eq!(replayed.snapshot(pool), ledger.snapshot(pool));
        }
        let counts: BTreeMap<Pool, usize> = ledger.counts();
        prop_assert_eq!(counts.values().sum::<usize>(), ids.len());
        // every gold member carries a human verdict
        for id in ledger.snapshot(Pool::Gold) {
            prop_assert!(ledger.human_verdict(&id).is_some());
        }
    }
}
