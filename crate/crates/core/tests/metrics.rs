use cgfr::metrics::{
    auc, build_verification_protocol, cosine_score, eer, rank_k, rank_k_curve, roc, roc_from_text, roc_to_text,
    score_pairs, scores_from_text, scores_to_text, tpr_at_fpr, IdentificationTrial, MetricsSummary, ScoreSet,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so that ties occur within and across classes.
fn score_set(rng: &mut ChaCha8Rng, n: usize) -> ScoreSet {
    let ng = rng.random_range(n / 4..n / 2);
    let shift = rng.random_range(0.0..0.4);
    let q = |v: f64| (v * 50.0).round() / 50.0;
    ScoreSet {
        genuine: (0..ng).map(|_| q(rng.random_range(0.0..1.0) + shift)).collect(),
        impostor: (0..n - ng).map(|_| q(rng.random_range(0.0..1.0))).collect(),
    }
}

fn mann_whitney(s: &ScoreSet) -> f64 {
    let mut wins = 0.0;
    for g in &s.genuine {
        for i in &s.impostor {
            wins += if g > i { 1.0 } else if g == i { 0.5 } else { 0.0 };
        }
    }
    wins / (s.genuine.len() * s.impostor.len()) as f64
}

fn rates(s: &ScoreSet, t: f64) -> (f64, f64) {
    let far = s.impostor.iter().filter(|&&v| v >= t).count() as f64 / s.impostor.len() as f64;
    let frr = s.genuine.iter().filter(|&&v| v < t).count() as f64 / s.genuine.len() as f64;
    (far, frr)
}

#[test]
fn auc_equals_mann_whitney_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let s = score_set(&mut rng, 200);
        let a = auc(&roc(&s).unwrap());
        assert!((a - mann_whitney(&s)).abs() <= 1e-12, "{a} {}", mann_whitney(&s));
    }
}

#[test]
fn eer_within_one_cell_of_a_fine_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    const STEPS: usize = 100_000;
    for _ in 0..30 {
        // continuous scores keep the crossing unique
        let ng = rng.random_range(60..120);
        let s = ScoreSet {
            genuine: (0..ng).map(|_| rng.random_range(0.2..1.2)).collect(),
            impostor: (0..200 - ng).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let e = eer(&s).unwrap();
        let (lo, hi) = (-0.1, 1.3);
        let cell = (hi - lo) / STEPS as f64;
        // the grid threshold where far and frr cross
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=STEPS {
            let t = lo + k as f64 * cell;
            let (far, frr) = rates(&s, t);
            if (far - frr).abs() < best.0 {
                best = ((far - frr).abs(), (far + frr) / 2.0);
            }
        }
        // one cell moves at most one score, which changes a rate by 1/n
        let tol = 1.0 / s.genuine.len().min(s.impostor.len()) as f64;
        assert!((e - best.1).abs() <= tol + best.0 / 2.0, "eer {e} grid {:?}", best);
    }
}

#[test]
fn tpr_at_fpr_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let s = score_set(&mut rng, 200);
        let curve = roc(&s).unwrap();
        for target in [0.0, 1e-4, 1e-3, 0.01, 0.05, 0.1, 0.5, 1.0] {
            // best tpr over every threshold (observed scores and +-inf) with far <= target
            let mut cands: Vec<f64> = s.genuine.iter().chain(&s.impostor).copied().collect();
            cands.extend([f64::INFINITY, f64::NEG_INFINITY]);
            let want = cands
                .iter()
                .filter(|&&t| rates(&s, t).0 <= target)
                .map(|&t| s.genuine.iter().filter(|&&v| v >= t).count() as f64 / s.genuine.len() as f64)
                .fold(0.0, f64::max);
            assert_eq!(tpr_at_fpr(&curve, target).unwrap(), want);
        }
        assert!(tpr_at_fpr(&curve, 1.5).is_err());
    }
}

fn random_trial(rng: &mut ChaCha8Rng, ids: usize, probes: usize, dim: usize) -> IdentificationTrial {
    let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| (rng.random_range(-2..=2) as f64) + 0.5).collect() };
    IdentificationTrial {
        gallery: (0..ids).map(|id| (id * 3 + 1, v(rng))).collect(),
        probes: (0..probes).map(|_| (rng.random_range(0..ids) * 3 + 1, v(rng))).collect(),
    }
}

#[test]
fn rank_k_matches_sorted_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let t = random_trial(&mut rng, 12, 40, 3);
        let curve = rank_k_curve(&t, 12).unwrap();
        for k in 1..=12 {
            let mut hits = 0;
            for (pid, pe) in &t.probes {
                let mut order: Vec<(f64, usize, usize)> = t
                    .gallery
                    .iter()
                    .enumerate()
                    .map(|(j, (gid, ge))| (cosine_score(pe, ge).unwrap(), j, *gid))
                    .collect();
                // descending score, ties by gallery position
                order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                hits += usize::from(order.iter().take(k).any(|o| o.2 == *pid));
            }
            let want = hits as f64 / t.probes.len() as f64;
            assert_eq!(curve[k - 1], want);
            assert_eq!(rank_k(&t, k).unwrap(), want);
        }
        assert_eq!(curve[11], 1.0);
    }
}

#[test]
fn identification_errors() {
    let mut t = IdentificationTrial {
        gallery: vec![(1, vec![1.0, 0.0]), (2, vec![0.0, 1.0])],
        probes: vec![(3, vec![1.0, 1.0])],
    };
    assert!(rank_k(&t, 1).is_err());
    t.probes[0].0 = 2;
    assert!(rank_k(&t, 0).is_err());
    assert_eq!(rank_k(&t, 1).unwrap(), 0.0);
    assert_eq!(rank_k(&t, 2).unwrap(), 1.0);
    t.gallery.push((1, vec![1.0, 1.0]));
    assert!(rank_k(&t, 1).is_err());
    assert!(rank_k(&IdentificationTrial::default(), 1).is_err());
}

#[test]
fn separable_and_reversed_scores() {
    let perfect = ScoreSet {
        genuine: vec![0.9, 0.8, 0.95],
        impostor: vec![0.1, 0.2, 0.3, 0.4],
    };
    let c = roc(&perfect).unwrap();
    assert_eq!(auc(&c), 1.0);
    assert_eq!(eer(&perfect).unwrap(), 0.0);
    assert_eq!(tpr_at_fpr(&c, 0.0).unwrap(), 1.0);
    let reversed = ScoreSet {
        genuine: perfect.impostor.clone(),
        impostor: perfect.genuine.clone(),
    };
    assert_eq!(auc(&roc(&reversed).unwrap()), 0.0);
    assert_eq!(eer(&reversed).unwrap(), 1.0);
    assert!(roc(&ScoreSet { genuine: vec![], impostor: vec![0.1] }).is_err());
    assert!(roc(&ScoreSet { genuine: vec![f64::NAN], impostor: vec![0.1] }).is_err());
}

#[test]
fn verification_protocol_counts_and_labels() {
    let ids: Vec<usize> = (0..30).map(|i| i / 5).collect();
    let pairs = build_verification_protocol(&ids, 9, 40, 100).unwrap();
    assert_eq!(pairs.iter().filter(|p| p.genuine).count(), 40);
    assert_eq!(pairs.iter().filter(|p| !p.genuine).count(), 100);
    let mut seen = std::collections::HashSet::new();
    for p in &pairs {
        assert!(p.a < p.b);
        assert_eq!(ids[p.a] == ids[p.b], p.genuine);
        assert!(seen.insert((p.a, p.b)));
    }
    assert_eq!(pairs, build_verification_protocol(&ids, 9, 40, 100).unwrap());
    assert_ne!(pairs, build_verification_protocol(&ids, 10, 40, 100).unwrap());
    // 6 ids x C(5,2) = 60 genuine pairs exist
    assert!(build_verification_protocol(&ids, 9, 61, 10).is_err());
    let all = build_verification_protocol(&ids, 9, 60, 375).unwrap();
    assert_eq!(all.len(), 435);

    let emb: Vec<Vec<f64>> = ids.iter().map(|&i| vec![1.0, i as f64]).collect();
    let s = score_pairs(&pairs, &emb).unwrap();
    assert!(s.genuine.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(score_pairs(&pairs, &emb[..3]).is_err());
}

#[test]
fn cosine_properties() {
    assert_eq!(cosine_score(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 1.0);
    assert_eq!(cosine_score(&[1.0, 0.0], &[-3.0, 0.0]).unwrap(), -1.0);
    assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(cosine_score(&[1.0], &[1.0, 0.0]).is_err());
}

#[test]
fn text_formats_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = ScoreSet {
        genuine: (0..50).map(|_| rng.random_range(-1.0..1.0)).collect(),
        impostor: (0..70).map(|_| rng.random_range(-1.0..1.0) * 1e-7).collect(),
    };
    assert_eq!(scores_from_text(&scores_to_text(&s)).unwrap(), s);
    let c = roc(&s).unwrap();
    assert_eq!(roc_from_text(&roc_to_text(&c)).unwrap(), c);
    let trial = random_trial(&mut rng, 5, 10, 4);
    let m = MetricsSummary::compute(&s, &trial).unwrap();
    assert_eq!(MetricsSummary::parse(&m.to_text()).unwrap(), m);
    assert_eq!(m.values()[0], auc(&c));
    assert!(scores_from_text("genuine\tabc\n").is_err());
}

proptest! {
    #[test]
    fn auc_is_invariant_to_monotone_transforms(
        g in proptest::collection::vec(-1.0f64..1.0, 1..40),
        i in proptest::collection::vec(-1.0f64..1.0, 1..40),
    ) {
        let s = ScoreSet { genuine: g.clone(), impostor: i.clone() };
        let t = ScoreSet {
            genuine: g.iter().map(|v| (3.0 * v).exp()).collect(),
            impostor: i.iter().map(|v| (3.0 * v).exp()).collect(),
        };
        let a = auc(&roc(&s).unwrap());
        prop_assert!((a - auc(&roc(&t).unwrap())).abs() < 1e-12);
        prop_assert!((a - mann_whitney(&s)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        let e = eer(&s).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn roc_is_monotone(
        g in proptest::collection::vec(-1.0f64..1.0, 1..40),
        i in proptest::collection::vec(-1.0f64..1.0, 1..40),
    ) {
        let c = roc(&ScoreSet { genuine: g, impostor: i }).unwrap();
        for w in c.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr && w[1].threshold < w[0].threshold);
        }
        let mut prev = 0.0;
        for k in 0..=10 {
            let v = tpr_at_fpr(&c, k as f64 / 10.0).unwrap();
            prop_assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn swapping_classes_mirrors_auc(
        g in proptest::collection::vec(-1.0f64..1.0, 1..30),
        i in proptest::collection::vec(-1.0f64..1.0, 1..30),
    ) {
        let a = auc(&roc(&ScoreSet { genuine: g.clone(), impostor: i.clone() }).unwrap());
        let b = auc(&roc(&ScoreSet { genuine: i, impostor: g }).unwrap());
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}
