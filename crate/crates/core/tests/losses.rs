mod common;
mod oracles;

use common::*;
use oracles::{rng, rollout_from};
use proposal_scorer::labels::{mapping_labels, prediction_targets, PredictionTargets};
use proposal_scorer::losses::{
    bce, map_loss, mon_proposal_loss, pred_loss, score_loss, total_loss, LossError, LossParts, LossWeights, BCE_EPS,
};
use proposal_scorer::metrics::{score_proposals, SceneScorer, ScoringConfig};
use proposal_scorer::proposals::ProposalSet;
use proposal_scorer::scene::Mode;
use proposal_scorer::synth::{gen_synthetic, GenConfig};
use proptest::prelude::*;
use rand::Rng;

fn entry_bce(x: f64, y: f64) -> f64 {
    let x = x.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -y * x.ln() - (1.0 - y) * (1.0 - x).ln()
}

fn steps(n: usize, f: impl FnMut(usize) -> [f64; 3]) -> Vec<[f64; 3]> {
    (0..n).map(f).collect()
}

#[test]
fn mon_loss_examples() {
    let expert = steps(8, |t| [t as f64, 0.1 * t as f64, 0.0]);
    let off = |d: f64| steps(8, |t| [t as f64 + d, 0.1 * t as f64, 0.0]);
    assert_eq!(mon_proposal_loss(&[vec![off(1.0), expert.clone()], vec![expert.clone()]], &expert, 0.1).unwrap(), 0.0);

    let mut single = expert.clone();
    single[3][0] += 0.5;
    assert_eq!(mon_proposal_loss(&[vec![single]], &expert, 0.1).unwrap(), 0.5);

    // Minima 2.0 then 3.0 over two iterations.
    let mut two = expert.clone();
    two[0][0] += 2.0;
    let mut three = expert.clone();
    three[1][1] -= 3.0;
    let got = mon_proposal_loss(&[vec![two.clone(), off(1.0)], vec![three, off(1.0)]], &expert, 0.1).unwrap();
    assert!((got - 3.2).abs() < 1e-15, "{got}");

    assert_eq!(mon_proposal_loss(&[vec![two]], &expert, 1.0), Err(LossError::BadDiscount(1.0)));
    assert!(matches!(mon_proposal_loss(&[vec![off(0.0)[..7].to_vec()]], &expert, 0.1), Err(LossError::Shape { .. })));
}

#[test]
fn bce_examples() {
    assert!((bce(&[0.5], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    let h = -0.9 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
    assert!((bce(&[0.9], &[0.9]).unwrap() - h).abs() < 1e-15);
    assert!((h - 0.3251).abs() < 1e-4);
    let perfect = bce(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
    assert!(perfect <= -(1.0 - BCE_EPS).ln() + 1e-15);
    let single = bce(&[0.5f32], &[1.0f32]).unwrap();
    assert!((single as f64 - 2f64.ln()).abs() < 1e-6);
}

#[test]
fn score_loss_matches_elementwise_oracle() {
    let scene = gen_synthetic(4, &GenConfig::default()).unwrap();
    let mut r = rng(51);
    let steps = scene.expert.as_ref().unwrap().len();
    let props: Vec<_> = (0..6)
        .map(|_| {
            let (dx, dy) = (r.gen_range(-3.0..3.0), r.gen_range(-2.0..2.0));
            scene.expert.as_ref().unwrap()[..steps].iter().map(|p| pose(p.x + dx, p.y + dy, p.heading)).collect()
        })
        .collect();
    let cards = score_proposals(&ProposalSet::new(props).unwrap(), &scene, &ScoringConfig::for_mode(scene.mode)).unwrap();
    let targets: Vec<f64> = cards.iter().map(|c| c.pdms).collect();
    let uniform = vec![0.5; targets.len()];
    let want = targets.iter().map(|&y| entry_bce(0.5, y)).sum::<f64>() / targets.len() as f64;
    assert!((score_loss(&uniform, &targets).unwrap() - want).abs() < 1e-15);
    assert!(score_loss(&[1.0, 1.0], &[1.0, 1.0]).unwrap() < 1e-6);
}

fn labels_pair() -> (proposal_scorer::labels::MappingLabels, proposal_scorer::labels::MappingLabels) {
    let mut scene = straight_scene(Mode::Navsim, 5.0, 5.0);
    scene.route.half_width = 5.0;
    let set = ProposalSet::single(straight(5.0, 8)).unwrap();
    let clean = rollout_from(0.1, 40, |t| (5.0 * t, 0.0, 0.0));
    let mut bumped = clean.clone();
    bumped.states[20].pose.y = 4.2;
    (mapping_labels(&set, &scene, &[clean]).unwrap(), mapping_labels(&set, &scene, &[bumped]).unwrap())
}

#[test]
fn map_loss_examples() {
    let (clean, bumped) = labels_pair();
    assert!(map_loss(&clean.as_f64(), &clean).unwrap() < 1e-6);
    assert!((map_loss(&vec![0.5; 16], &clean).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert!(matches!(map_loss(&[0.5; 3], &clean), Err(LossError::Shape { .. })));

    // The bump flips only the on-road label of step 3, at flat index 6.
    let flipped: Vec<usize> = (0..16).filter(|&i| clean.as_f64()[i] != bumped.as_f64()[i]).collect();
    assert_eq!(flipped, vec![6]);
    let mut r = rng(52);
    let probs: Vec<f64> = (0..16).map(|_| r.gen_range(0.01..0.99)).collect();
    let delta = map_loss(&probs, &bumped).unwrap() - map_loss(&probs, &clean).unwrap();
    let want: f64 = flipped.iter().map(|&i| (entry_bce(probs[i], 0.0) - entry_bce(probs[i], 1.0)) / 16.0).sum();
    assert!((delta - want).abs() < 1e-14, "{delta} vs {want}");
}

fn chase_targets() -> PredictionTargets {
    let mut scene = straight_scene(Mode::Navsim, 10.0, 5.0);
    scene.agents.push(moving_vehicle(7, pose(20.0, 0.0, 0.0), 3.0));
    let set = ProposalSet::new(vec![straight(10.0, 8), straight(1.0, 8)]).unwrap();
    let cfg = ScoringConfig::for_mode(Mode::Navsim);
    let scorer = SceneScorer::new(&scene, &cfg).unwrap();
    let cards: Vec<_> = set.iter().map(|p| scorer.score(p).unwrap().0).collect();
    prediction_targets(&set, &scene, &cards).unwrap()
}

fn validity_probs(t: &PredictionTargets) -> Vec<f64> {
    t.validity_flat().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
}

#[test]
fn pred_loss_examples() {
    let targets = chase_targets();
    assert!(targets.any_valid() && !targets.validity_flat().iter().all(|&v| v));
    let corners = targets.corners_flat();
    let v = validity_probs(&targets);
    assert!(pred_loss(&corners, &v, &targets, 0.1).unwrap() < 1e-6);

    // One coordinate off by a metre among M valid corner entries.
    let m = 8 * targets.validity_flat().iter().filter(|&&v| v).count();
    let slot = targets.validity_flat().iter().position(|&v| v).unwrap();
    let mut moved = corners.clone();
    moved[slot * 8 + 5] += 1.0;
    let delta = pred_loss(&moved, &v, &targets, 0.1).unwrap() - pred_loss(&corners, &v, &targets, 0.1).unwrap();
    assert!((delta - 1.0 / m as f64).abs() < 1e-15, "{delta} vs {}", 1.0 / m as f64);

    // Errors on invalid slots are masked out entirely.
    let invalid = targets.validity_flat().iter().position(|&v| !v).unwrap();
    let mut masked = corners.clone();
    masked[invalid * 8] += 100.0;
    assert_eq!(pred_loss(&masked, &v, &targets, 0.1).unwrap(), pred_loss(&corners, &v, &targets, 0.1).unwrap());
}

#[test]
fn all_invalid_targets_leave_only_the_validity_term() {
    let scene = gen_synthetic(2, &GenConfig::default()).unwrap();
    let set = ProposalSet::single(scene.expert.clone().unwrap()).unwrap();
    let cards = score_proposals(&set, &scene, &ScoringConfig::for_mode(scene.mode)).unwrap();
    let targets = prediction_targets(&set, &scene, &cards).unwrap();
    assert!(!targets.any_valid());
    let mut r = rng(53);
    let corners: Vec<f64> = (0..targets.corners_flat().len()).map(|_| r.gen_range(-50.0..50.0)).collect();
    let v: Vec<f64> = (0..targets.validity_flat().len()).map(|_| r.gen_range(0.01..0.99)).collect();
    let bce_term = v.iter().map(|&x| entry_bce(x, 0.0)).sum::<f64>() / v.len() as f64;
    assert!((pred_loss(&corners, &v, &targets, 0.1).unwrap() - 0.1 * bce_term).abs() < 1e-15);
    assert!(matches!(pred_loss(&corners[1..], &v, &targets, 0.1), Err(LossError::Shape { .. })));
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_discount, w.w_score, w.w_map, w.w_pred, w.w_bce), (0.1, 1.0, 2.0, 1.0, 0.1));
    assert_eq!(total_loss(&LossParts::<f64>::default(), &w), 0.0);
    let unit = LossParts { proposal: 1.0, score: 1.0, map: 1.0, pred: 1.0 };
    assert_eq!(total_loss(&unit, &w), 5.0);
    assert!(LossWeights { w_map: -1.0, ..w }.validate().is_err());
    assert!(LossWeights { lambda_discount: 0.0, ..w }.validate().is_err());
}

fn probs_and_targets() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 1..40).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn bce_is_nonnegative((p, y) in probs_and_targets()) {
        prop_assert!(bce(&p, &y).unwrap() >= 0.0);
    }

    #[test]
    fn bce_ignores_order((p, y) in probs_and_targets(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        let mut r = rng(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, r.gen_range(0..=i));
        }
        let (pp, yy): (Vec<f64>, Vec<f64>) = idx.iter().map(|&i| (p[i], y[i])).unzip();
        prop_assert!((score_loss(&p, &y).unwrap() - score_loss(&pp, &yy).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bce_falls_as_prediction_approaches_a_positive_label(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(bce(&[hi], &[1.0]).unwrap() <= bce(&[lo], &[1.0]).unwrap());
        prop_assert!(bce(&[lo], &[0.0]).unwrap() <= bce(&[hi], &[0.0]).unwrap());
    }

    #[test]
    fn total_loss_is_linear(a in prop::array::uniform4(0.0..10.0f64), b in prop::array::uniform4(0.0..10.0f64), s in 0.0..3.0f64) {
        let parts = |v: [f64; 4]| LossParts { proposal: v[0], score: v[1], map: v[2], pred: v[3] };
        let w = LossWeights::default();
        let sum = parts([0, 1, 2, 3].map(|i| a[i] + s * b[i]));
        let want = total_loss(&parts(a), &w) + s * total_loss(&parts(b), &w);
        prop_assert!((total_loss(&sum, &w) - want).abs() < 1e-9);
    }

    #[test]
    fn mon_loss_ignores_proposal_order(seed in any::<u64>(), lambda in 0.01..0.99f64) {
        let mut r = rng(seed);
        let expert = steps(6, |t| [t as f64, 0.0, 0.0]);
        let iters: Vec<Vec<Vec<[f64; 3]>>> = (0..3)
            .map(|_| (0..4).map(|_| steps(6, |_| [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-1.0..1.0)])).collect())
            .collect();
        let reversed: Vec<_> = iters.iter().map(|ps| ps.iter().rev().cloned().collect()).collect();
        prop_assert_eq!(mon_proposal_loss(&iters, &expert, lambda).unwrap(), mon_proposal_loss(&reversed, &expert, lambda).unwrap());
        prop_assert!(mon_proposal_loss(&iters, &expert, lambda).unwrap() >= 0.0);
    }
}
