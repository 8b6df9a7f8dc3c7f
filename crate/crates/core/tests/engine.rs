mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use novelclass::niw::ln_gamma;
use novelclass::rng::rng_from_seed;
use novelclass::sir::{ClusterKey, DecisionMode, EngineConfig, EngineState, Label, Target};
use novelclass::{LabeledDataset, NiwParams};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn student_t_1d(x: f64, mu0: f64, kappa: f64, s0: f64, m: f64, data: &[f64]) -> f64 {
    let (mun, kn, sn, mn) = posterior_1d(mu0, kappa, s0, m, data);
    let nu = mn;
    let scale2 = sn * (kn + 1.0) / (kn * nu);
    let z = (x - mun).powi(2) / scale2;
    (ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
        - 0.5 * (nu + 1.0) * (1.0 + z / nu).ln())
    .exp()
}

fn two_blob_training(rng: &mut impl Rng) -> LabeledDataset {
    let mut xs = Vec::new();
    let mut ls = Vec::new();
    for (c, cx) in [(1u32, -4.0), (2, 4.0)] {
        for _ in 0..15 {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            xs.push(DVector::from_vec(vec![cx + a, b]));
            ls.push(c);
        }
    }
    LabeledDataset::new(2, xs, ls).unwrap()
}

fn stream_2d(rng: &mut impl Rng, n: usize) -> Vec<DVector<f64>> {
    let centres = [(-4.0, 0.0), (4.0, 0.0), (0.0, 7.0), (0.0, -7.0)];
    (0..n)
        .map(|_| {
            let (cx, cy) = centres[rng.random_range(0..4)];
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            DVector::from_vec(vec![cx + a, cy + b])
        })
        .collect()
}

fn niw_2d() -> NiwParams {
    NiwParams::new(DVector::zeros(2), 0.05, DMatrix::identity(2, 2) * 3.0, 5.0).unwrap()
}

#[test]
fn child_weights_match_hand_computation() {
    let (mu0, kappa, s0, m, alpha) = (0.0, 0.5, 2.0, 4.0, 0.7);
    let a = [-1.0, -0.5, 0.2];
    let b = [3.0, 3.5];
    let train = LabeledDataset::new(1, a.iter().chain(&b).map(|&x| v1(x)).collect(), vec![1, 1, 1, 2, 2]).unwrap();
    let mut cfg = EngineConfig::new(niw_1d(mu0, kappa, s0, m), alpha, 3);
    cfg.seed = 5;
    let engine = EngineState::init(cfg, &train).unwrap();

    let x = 1.4;
    let raw = [
        3.0 * student_t_1d(x, mu0, kappa, s0, m, &a),
        2.0 * student_t_1d(x, mu0, kappa, s0, m, &b),
        alpha * student_t_1d(x, mu0, kappa, s0, m, &[]),
    ];
    let total: f64 = raw.iter().sum();
    // the three initial particles are one hypothesis and expand once
    let pool = engine.expand(&v1(x)).unwrap();
    assert_eq!(pool.entries.len(), 3);
    for (i, e) in pool.entries.iter().enumerate() {
        assert_eq!(e.parent, 0);
        let want = raw[i] / total;
        assert!((e.weight - want).abs() < 1e-12 * want.max(1e-300) + 1e-15, "{i}: {} vs {want}", e.weight);
    }
    assert_eq!(pool.entries[2].target, Target::New);
}

#[test]
fn initial_copies_do_not_collapse_onto_one_child() {
    let train = LabeledDataset::new(1, [-0.5, 0.0, 0.5].iter().map(|&x| v1(x)).collect(), vec![1; 3]).unwrap();
    let niw = niw_1d(0.0, 0.5, 2.0, 4.0);
    for seed in 0..20 {
        let mut cfg = EngineConfig::new(niw.clone(), 1.0, 4);
        cfg.seed = seed;
        let mut engine = EngineState::init(cfg, &train).unwrap();
        let d = engine.step(&v1(2.0)).unwrap();
        assert_eq!(engine.particles().len(), 4);
        let h = engine.hypotheses();
        assert_eq!(h.len(), 2);
        let founded = h.iter().find(|(i, _)| engine.particles()[*i].discovered_count() == 1).unwrap();
        assert!((founded.1.exp() - d.p_novel).abs() < 1e-12);
    }
}

#[test]
fn second_sample_sees_first_founded_cluster() {
    let (mu0, kappa, s0, m, alpha) = (0.0, 0.5, 2.0, 4.0, 1.0);
    let a = [-1.0, 0.0, 1.0];
    let train = LabeledDataset::new(1, a.iter().map(|&x| v1(x)).collect(), vec![4; 3]).unwrap();
    let engine_cfg = EngineConfig::new(niw_1d(mu0, kappa, s0, m), alpha, 1);
    let mut engine = EngineState::init(engine_cfg, &train).unwrap();
    let d = engine.step(&v1(30.0)).unwrap();
    assert_eq!(d.chosen_label, Label::New(0));
    let pool = engine.expand(&v1(29.0)).unwrap();
    let raw = [
        3.0 * student_t_1d(29.0, mu0, kappa, s0, m, &a),
        1.0 * student_t_1d(29.0, mu0, kappa, s0, m, &[30.0]),
        alpha * student_t_1d(29.0, mu0, kappa, s0, m, &[]),
    ];
    let total: f64 = raw.iter().sum();
    for (e, r) in pool.entries.iter().zip(raw) {
        assert!((e.weight - r / total).abs() < 1e-12);
    }
}

#[test]
fn resume_from_checkpoint_is_identical() {
    let mut rng = rng_from_seed(11);
    let train = two_blob_training(&mut rng);
    let stream = stream_2d(&mut rng, 40);
    let mut cfg = EngineConfig::new(niw_2d(), 1.0, 60);
    cfg.seed = 99;

    let mut full = EngineState::init(cfg.clone(), &train).unwrap();
    let expect = full.run_stream(&stream).unwrap();

    let mut first = EngineState::init(cfg, &train).unwrap();
    first.run_stream(&stream[..17]).unwrap();
    let text = first.to_checkpoint_string().unwrap();
    drop(first);
    let mut resumed = EngineState::from_checkpoint_str(&text).unwrap();
    assert_eq!(resumed.n_seen(), 17);
    let got = resumed.run_stream(&stream[17..]).unwrap();
    for (g, e) in got.iter().zip(&expect[17..]) {
        assert_eq!(g.chosen_label, e.chosen_label);
        assert_eq!(g.p_novel.to_bits(), e.p_novel.to_bits());
        assert_eq!(g.ess.to_bits(), e.ess.to_bits());
    }
    assert_eq!(resumed.to_checkpoint_string().unwrap(), full.to_checkpoint_string().unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_state() {
    let mut rng = rng_from_seed(3);
    let train = two_blob_training(&mut rng);
    let stream = stream_2d(&mut rng, 25);
    let mut engine = EngineState::init(EngineConfig::new(niw_2d(), 1.0, 30), &train).unwrap();
    engine.run_stream(&stream).unwrap();
    let text = engine.to_checkpoint_string().unwrap();
    let back = EngineState::from_checkpoint_str(&text).unwrap();
    assert_eq!(back.to_checkpoint_string().unwrap(), text);
    assert_eq!(back.map_assignments(), engine.map_assignments());
    for (a, b) in back.particles().iter().zip(engine.particles()) {
        assert_eq!(a.log_weight().to_bits(), b.log_weight().to_bits());
        assert_eq!(a.cluster_count(), b.cluster_count());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut rng = rng_from_seed(4);
    let train = two_blob_training(&mut rng);
    let engine = EngineState::init(EngineConfig::new(niw_2d(), 1.0, 4), &train).unwrap();
    let text = engine.to_checkpoint_string().unwrap();
    let wrong_tag = text.replacen("novelclass-checkpoint", "other", 1);
    assert!(EngineState::from_checkpoint_str(&wrong_tag).unwrap_err().is_input_error());
    let wrong_version = text.replacen("\"version\":1", "\"version\":7", 1);
    assert!(EngineState::from_checkpoint_str(&wrong_version).unwrap_err().is_input_error());
    assert!(EngineState::from_checkpoint_str(&text[..text.len() / 2]).is_err());
}

#[test]
fn single_particle_matches_greedy_rule() {
    let mut rng = rng_from_seed(21);
    let train = two_blob_training(&mut rng);
    let stream = stream_2d(&mut rng, 60);
    let mut engine = EngineState::init(EngineConfig::new(niw_2d(), 0.5, 1), &train).unwrap();
    let got = engine.run_stream(&stream).unwrap();
    let want = greedy_rule(engine.known(), &niw_2d(), 0.5, &stream);
    for (g, w) in got.iter().zip(want) {
        let key = g.chosen_label.key();
        match w {
            (Some(c), None) => assert_eq!(key, ClusterKey::Labeled(c)),
            (None, Some(f)) => assert_eq!(key, ClusterKey::Founded(f)),
            _ => unreachable!(),
        }
    }
}

#[test]
fn zero_alpha_never_founds() {
    let mut rng = rng_from_seed(8);
    let train = two_blob_training(&mut rng);
    let stream = stream_2d(&mut rng, 30);
    let mut engine = EngineState::init(EngineConfig::new(niw_2d(), 0.0, 1), &train).unwrap();
    for d in engine.run_stream(&stream).unwrap() {
        assert_eq!(d.p_novel, 0.0);
        assert!(matches!(d.chosen_label, Label::Labeled(_)));
    }
}

#[test]
fn marginal_mode_picks_heaviest_label() {
    let mut rng = rng_from_seed(12);
    let train = two_blob_training(&mut rng);
    let stream = stream_2d(&mut rng, 30);
    let mut cfg = EngineConfig::new(niw_2d(), 1.0, 40);
    cfg.decision = DecisionMode::Marginal;
    let mut engine = EngineState::init(cfg, &train).unwrap();
    for d in engine.run_stream(&stream).unwrap() {
        let best_known = d.labeled_posteriors.iter().map(|p| p.1).fold(0.0, f64::max);
        match d.chosen_label {
            Label::Labeled(id) => {
                let w = d.labeled_posteriors.iter().find(|p| p.0 == id).unwrap().1;
                assert_eq!(w, best_known);
                assert!(w >= d.p_novel);
            }
            Label::New(_) => assert!(d.p_novel >= best_known),
            Label::Cluster(_) => assert!(d.unlabeled_mass > 0.0),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_stay_normalized(seed in 0u64..10_000, particles in 1usize..40, alpha in 0.01f64..5.0, n in 1usize..25) {
        let mut rng = rng_from_seed(seed);
        let train = two_blob_training(&mut rng);
        let stream = stream_2d(&mut rng, n);
        let mut cfg = EngineConfig::new(niw_2d(), alpha, particles);
        cfg.seed = seed;
        let mut engine = EngineState::init(cfg, &train).unwrap();
        for (i, x) in stream.iter().enumerate() {
            let pool = engine.expand(x).unwrap();
            let s: f64 = pool.entries.iter().map(|e| e.weight).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            let d = engine.step(x).unwrap();
            let mass = d.p_novel + d.unlabeled_mass + d.labeled_posteriors.iter().map(|p| p.1).sum::<f64>();
            prop_assert!((mass - 1.0).abs() < 1e-9);
            prop_assert!(engine.particles().len() <= particles);
            let w: f64 = engine.particles().iter().map(|p| p.log_weight().exp()).sum();
            prop_assert!((w - 1.0).abs() < 1e-9);
            prop_assert!(d.ess >= 1.0 - 1e-9 && d.ess <= particles as f64 + 1e-9);
            for p in engine.particles() {
                // known counts plus one per streamed sample
                let counts: f64 = p.clusters().map(|c| c.crp_count()).sum();
                prop_assert!((counts - (30 + i + 1) as f64).abs() < 1e-9);
                for c in p.clusters().filter(|c| !c.key().is_labeled()) {
                    prop_assert!(c.stats().n() >= 1);
                    prop_assert_eq!(c.crp_count(), c.stats().n() as f64);
                }
                prop_assert_eq!(p.assignments().len(), i + 1);
            }
        }
    }
}
