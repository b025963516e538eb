use editrefiner_core::objectives::*;
use editrefiner_core::SaliencyMap;
use editrefiner_oracles as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn single(ratio: f64, adv: f64, eps: f64) -> GrpoBatch {
    GrpoBatch {
        log_probs_policy: vec![ratio.ln()],
        log_probs_ref: vec![0.0],
        advantages: vec![adv],
        clip_eps: eps,
        kl_coeff: 0.0,
    }
}

#[test]
fn clipped_surrogate_hand_cases() {
    assert!((grpo_objective(&single(2.0, 1.0, 0.2)).unwrap() - 1.2).abs() < 1e-12);
    assert!((grpo_objective(&single(0.5, -1.0, 0.2)).unwrap() + 0.8).abs() < 1e-12);
    // Inside the band nothing is clipped.
    assert!((grpo_objective(&single(1.1, 1.0, 0.2)).unwrap() - 1.1).abs() < 1e-12);
    // Pessimistic branch: large ratio with negative advantage stays unclipped.
    assert!((grpo_objective(&single(2.0, -1.0, 0.2)).unwrap() + 2.0).abs() < 1e-12);
}

#[test]
fn kl_penalty_is_mean_log_ratio() {
    let b = GrpoBatch {
        log_probs_policy: vec![-1.0, -0.5],
        log_probs_ref: vec![-1.2, -0.5],
        advantages: vec![0.0, 0.0],
        clip_eps: 0.2,
        kl_coeff: 0.5,
    };
    assert!((grpo_objective(&b).unwrap() + 0.5 * 0.1).abs() < 1e-12);
}

fn away_from(x: f64, points: &[f64], margin: f64) -> bool {
    points.iter().all(|p| (x - p).abs() > margin)
}

#[test]
fn hybrid_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights = [
        HybridLossWeights::default(),
        HybridLossWeights { alpha: 0.0, beta: 0.0 },
        HybridLossWeights { alpha: 0.5, beta: 0.2 },
    ];
    for case in 0..60 {
        let (w, h) = (5u32, 4u32);
        let n = (w * h) as usize;
        let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let p: Vec<f64> = g
            .iter()
            .map(|&gv| loop {
                let v = rng.random_range(0.05..0.95);
                if away_from(v, &[gv], 1e-3) {
                    break v;
                }
            })
            .collect();
        let wts = weights[case % weights.len()];
        let gt = SaliencyMap::new(w, h, g.clone()).unwrap();
        let pred = SaliencyMap::new(w, h, p.clone()).unwrap();
        let analytic = hybrid_saliency_loss_grad(&pred, &gt, &wts).unwrap();

        let loss = |x: &[f64]| {
            let m = SaliencyMap::new(w, h, x.to_vec()).unwrap();
            hybrid_saliency_loss(&m, &gt, &wts).unwrap()
        };
        let numeric = oracle::numeric_gradient(loss, &p, STEP);
        for (i, (a, b)) in analytic.iter().zip(&numeric).enumerate() {
            let e = oracle::rel_err(*a, *b, 1e-3);
            assert!(e < GRAD_TOL, "case {case} pixel {i}: {a} vs {b} (rel {e})");
        }
    }
}

fn grpo_from(x: &[f64], n: usize, eps: f64, beta: f64) -> GrpoBatch {
    GrpoBatch {
        log_probs_policy: x[..n].to_vec(),
        log_probs_ref: x[n..2 * n].to_vec(),
        advantages: x[2 * n..].to_vec(),
        clip_eps: eps,
        kl_coeff: beta,
    }
}

#[test]
fn grpo_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (eps, beta) = (0.2, 0.05);
    for case in 0..100 {
        let n = rng.random_range(1..8);
        let mut x = Vec::with_capacity(3 * n);
        let mut lr = Vec::with_capacity(n);
        let mut lp = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random_range(-2.0..-0.1);
            // Keep the ratio clear of the clip edges so the objective is smooth.
            let log_ratio = loop {
                let v: f64 = rng.random_range(-0.6..0.6);
                if away_from(v.exp(), &[1.0 - eps, 1.0 + eps], 1e-3) {
                    break v;
                }
            };
            lr.push(r);
            lp.push(r + log_ratio);
        }
        x.extend(&lp);
        x.extend(&lr);
        x.extend((0..n).map(|_| loop {
            let a: f64 = rng.random_range(-2.0..2.0);
            if a.abs() > 1e-3 {
                break a;
            }
        }));

        let analytic = grpo_objective_grad(&grpo_from(&x, n, eps, beta)).unwrap();
        let numeric = oracle::numeric_gradient(
            |v| grpo_objective(&grpo_from(v, n, eps, beta)).unwrap(),
            &x,
            STEP,
        );
        let flat: Vec<f64> = analytic
            .log_probs_policy
            .iter()
            .chain(&analytic.log_probs_ref)
            .chain(&analytic.advantages)
            .copied()
            .collect();
        for (i, (a, b)) in flat.iter().zip(&numeric).enumerate() {
            let e = oracle::rel_err(*a, *b, 1e-3);
            assert!(e < GRAD_TOL, "case {case} component {i}: {a} vs {b} (rel {e})");
        }
    }
}

#[test]
fn overall_score_hand_values() {
    let flat = overall_score(&DimensionScores::new(80.0, 80.0, 80.0)).unwrap();
    assert!((flat - 80.0).abs() < 1e-12);
    // 64^0.3 · 81^0.4 · 49^0.3
    let mixed = overall_score(&DimensionScores::new(64.0, 81.0, 49.0)).unwrap();
    assert!((mixed - 64.909_284_777_831_32).abs() < 1e-12);
    assert!(overall_score(&DimensionScores::new(0.0, 50.0, 50.0)).is_err());
    let floored = DimensionScores::new(0.0, 50.0, 50.0).floored();
    assert!(overall_score(&floored).unwrap() > 0.0);
}

#[test]
fn score_loss_matches_mse_plus_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mk = |rng: &mut ChaCha8Rng| {
            DimensionScores::new(
                rng.random_range(1.0..100.0),
                rng.random_range(1.0..100.0),
                rng.random_range(1.0..100.0),
            )
        };
        let pred: Vec<_> = (0..6).map(|_| mk(&mut rng)).collect();
        let gt: Vec<_> = (0..6).map(|_| mk(&mut rng)).collect();
        let mut want = 0.0;
        for d in 0..3 {
            let p: Vec<f64> = pred.iter().map(|s| s.as_array()[d]).collect();
            let g: Vec<f64> = gt.iter().map(|s| s.as_array()[d]).collect();
            let mse = p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 6.0;
            want += mse + 1.0 - oracle::pearson(&p, &g);
        }
        assert!((score_loss(&pred, &gt).unwrap() - want).abs() < 1e-10);
    }
}

#[test]
fn hybrid_loss_edge_cases() {
    let z = SaliencyMap::zeros(3, 3).unwrap();
    let v = SaliencyMap::from_fn(3, 3, |x, _| x as f64 / 2.0).unwrap();
    assert!(matches!(
        hybrid_saliency_loss(&z, &v, &HybridLossWeights::default()),
        Err(editrefiner_core::Error::UndefinedMetric(_))
    ));
    let bad = HybridLossWeights { alpha: 0.7, beta: 0.5 };
    assert!(hybrid_saliency_loss(&v, &v, &bad).is_err());
}

proptest! {
    #[test]
    fn overall_is_bounded_by_min_and_max(a in 1e-3f64..100.0, b in 1e-3f64..100.0, c in 1e-3f64..100.0) {
        let o = overall_score(&DimensionScores::new(a, b, c)).unwrap();
        let (lo, hi) = (a.min(b).min(c), a.max(b).max(c));
        prop_assert!(o >= lo * (1.0 - 1e-12) && o <= hi * (1.0 + 1e-12));
        let up = overall_score(&DimensionScores::new(a * 1.1, b, c)).unwrap();
        prop_assert!(up > o);
    }

    #[test]
    fn hybrid_loss_is_nonnegative(p in prop::collection::vec(0.01f64..1.0, 9), g in prop::collection::vec(0.01f64..1.0, 9)) {
        let pred = SaliencyMap::new(3, 3, p).unwrap();
        let gt = SaliencyMap::new(3, 3, g).unwrap();
        let t = hybrid_terms(&pred, &gt).unwrap();
        prop_assert!(t.l1 >= 0.0 && t.bce >= 0.0 && t.kl > -1e-6);
    }

    #[test]
    fn advantages_are_centred(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
        let a = group_relative_advantages(&rewards, 1e-8);
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-6);
    }
}
