mod common;

use common::*;
use nalgebra::DVector;
use novelclass::gibbs::{
    assignment_count, exact_enumeration_posterior, run_chain, GibbsConfig, GibbsInit, GibbsState,
};
use novelclass::model::KnownClass;
use novelclass::niw::ln_gamma;
use novelclass::rng::rng_from_seed;

const MU0: f64 = 0.0;
const KAPPA: f64 = 0.2;
const S0: f64 = 1.5;
const M: f64 = 4.0;

fn t_pdf(x: f64, data: &[f64]) -> f64 {
    let (mun, kn, sn, mn) = posterior_1d(MU0, KAPPA, S0, M, data);
    let scale2 = sn * (kn + 1.0) / (kn * mn);
    let z = (x - mun).powi(2) / scale2;
    (ln_gamma(0.5 * (mn + 1.0)) - ln_gamma(0.5 * mn) - 0.5 * (mn * std::f64::consts::PI * scale2).ln()
        - 0.5 * (mn + 1.0) * (1.0 + z / mn).ln())
    .exp()
}

/// Brute force over label sequences. Labels `< k` are known classes, `k + b`
/// is the `b`-th discovered block in order of first appearance.
struct Brute {
    weights: Vec<(Vec<usize>, f64)>,
}

fn brute(train: &[Vec<f64>], counts: &[f64], alpha: f64, xs: &[f64]) -> Brute {
    let mut out = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        path: &mut Vec<usize>,
        blocks: usize,
        train: &[Vec<f64>],
        counts: &[f64],
        alpha: f64,
        xs: &[f64],
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let k = train.len();
        if i == xs.len() {
            // probability of the whole sequence, rebuilt from scratch
            let mut w = 1.0;
            for t in 0..xs.len() {
                let total: f64 = counts.iter().sum::<f64>() + t as f64;
                let label = path[t];
                let before: Vec<f64> = (0..t).filter(|&s| path[s] == label).map(|s| xs[s]).collect();
                let seen_blocks = path[..t].iter().filter(|&&l| l >= k).max().map_or(0, |m| m - k + 1);
                if label < k {
                    let mut members = train[label].clone();
                    members.extend(&before);
                    w *= (counts[label] + before.len() as f64) / (alpha + total) * t_pdf(xs[t], &members);
                } else if label - k < seen_blocks {
                    w *= before.len() as f64 / (alpha + total) * t_pdf(xs[t], &before);
                } else {
                    w *= alpha / (alpha + total) * t_pdf(xs[t], &[]);
                }
            }
            out.push((path.clone(), w));
            return;
        }
        for l in 0..k + blocks + 1 {
            if l == k + blocks && alpha == 0.0 {
                continue;
            }
            path.push(l);
            go(i + 1, path, blocks + usize::from(l == k + blocks), train, counts, alpha, xs, out);
            path.pop();
        }
    }
    go(0, &mut Vec::new(), 0, train, counts, alpha, xs, &mut out);
    Brute { weights: out }
}

impl Brute {
    fn evidence(&self) -> f64 {
        self.weights.iter().map(|w| w.1).sum()
    }
}

fn known(train: &[Vec<f64>], counts: &[f64]) -> Vec<KnownClass> {
    train.iter().zip(counts).enumerate().map(|(j, (xs, &c))| known_1d(j as u32 + 1, xs, c)).collect()
}

fn stream(xs: &[f64]) -> Vec<DVector<f64>> {
    xs.iter().map(|&x| v1(x)).collect()
}

#[test]
fn exact_posterior_matches_brute_force_for_three_samples() {
    let train = vec![vec![-0.5, 0.1, 0.4, -0.2]];
    let counts = [4.0];
    let xs = [0.3, 3.1, 2.7];
    let alpha = 0.8;
    let b = brute(&train, &counts, alpha, &xs);
    assert_eq!(b.weights.len(), 15);
    let ex = exact_enumeration_posterior(&stream(&xs), &known(&train, &counts), &niw_1d(MU0, KAPPA, S0, M), alpha).unwrap();
    assert_eq!(ex.leaves, 15);
    let z = b.evidence();
    assert!((ex.log_evidence - z.ln()).abs() < 1e-10);
    for i in 0..3 {
        let unl: f64 = b.weights.iter().filter(|w| w.0[i] >= 1).map(|w| w.1).sum::<f64>() / z;
        let founds: f64 = b
            .weights
            .iter()
            .filter(|w| w.0[i] >= 1 && !w.0[..i].contains(&w.0[i]))
            .map(|w| w.1)
            .sum::<f64>()
            / z;
        assert!((ex.p_unlabeled[i] - unl).abs() < 1e-10, "{i}");
        assert!((ex.p_founds[i] - founds).abs() < 1e-10, "{i}");
        assert!((ex.labeled[i][0].1 + ex.p_unlabeled[i] - 1.0).abs() < 1e-12);
        // filtered: the same computation on the prefix
        let pb = brute(&train, &counts, alpha, &xs[..=i]);
        let pz = pb.evidence();
        let filt: f64 = pb
            .weights
            .iter()
            .filter(|w| w.0[i] >= 1 && !w.0[..i].contains(&w.0[i]))
            .map(|w| w.1)
            .sum::<f64>()
            / pz;
        assert!((ex.p_new_filtered[i] - filt).abs() < 1e-10, "{i}");
        for j in 0..3 {
            let co: f64 = b.weights.iter().filter(|w| w.0[i] == w.0[j]).map(|w| w.1).sum::<f64>() / z;
            assert!((ex.co_clustering[i * 3 + j] - co).abs() < 1e-10);
        }
    }
    // first sample: p(new) = alpha p(x) / (alpha p(x) + 4 p(x | train))
    let a = alpha * t_pdf(xs[0], &[]);
    let l = 4.0 * t_pdf(xs[0], &train[0]);
    assert!((ex.p_new_filtered[0] - a / (a + l)).abs() < 1e-12);
}

#[test]
fn exact_posterior_two_known_classes() {
    let train = vec![vec![-2.0, -1.5, -2.4], vec![2.0, 2.2]];
    let counts = [1.0, 1.0];
    let xs = [-1.8, 0.1, 2.5, 6.0];
    let alpha = 1.3;
    let b = brute(&train, &counts, alpha, &xs);
    assert_eq!(b.weights.len() as u64, assignment_count(4, 2, true));
    let ex = exact_enumeration_posterior(&stream(&xs), &known(&train, &counts), &niw_1d(MU0, KAPPA, S0, M), alpha).unwrap();
    let z = b.evidence();
    assert!((ex.log_evidence - z.ln()).abs() < 1e-10);
    for i in 0..4 {
        for c in 0..2 {
            let p: f64 = b.weights.iter().filter(|w| w.0[i] == c).map(|w| w.1).sum::<f64>() / z;
            assert!((ex.labeled[i][c].1 - p).abs() < 1e-10);
        }
    }
}

#[test]
fn evidence_is_order_invariant() {
    let train = vec![vec![-0.5, 0.1, 0.4]];
    let k = known(&train, &[3.0]);
    let niw = niw_1d(MU0, KAPPA, S0, M);
    let xs = [0.2, 3.0, 2.5, -0.4, 3.3, 0.9];
    let base = exact_enumeration_posterior(&stream(&xs), &k, &niw, 1.0).unwrap();
    for perm in [[5, 4, 3, 2, 1, 0], [2, 0, 4, 1, 5, 3], [1, 3, 5, 0, 2, 4]] {
        let permuted: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
        let ex = exact_enumeration_posterior(&stream(&permuted), &k, &niw, 1.0).unwrap();
        assert!((ex.log_evidence - base.log_evidence).abs() < 1e-10);
        for (pos, &orig) in perm.iter().enumerate() {
            // smoothed quantities follow the sample; founding does not
            assert!((ex.p_unlabeled[pos] - base.p_unlabeled[orig]).abs() < 1e-10);
            for (pos2, &orig2) in perm.iter().enumerate() {
                assert!((ex.co_clustering[pos * 6 + pos2] - base.co_clustering[orig * 6 + orig2]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn leaf_counts() {
    // Bell numbers with no known classes
    let bell = [1u64, 1, 2, 5, 15, 52, 203, 877, 4140];
    for (n, &b) in bell.iter().enumerate() {
        assert_eq!(assignment_count(n, 0, true), b);
    }
    assert_eq!(assignment_count(8, 1, true), 21147);
    assert_eq!(assignment_count(5, 3, false), 243);
}

#[test]
fn conditional_matches_direct_formula() {
    let train = vec![vec![-0.5, 0.1, 0.4], vec![4.0, 4.4]];
    let counts = [3.0, 2.0];
    let k = known(&train, &counts);
    let niw = niw_1d(MU0, KAPPA, S0, M);
    let xs = [0.0, 2.0, 2.2, 8.0, 7.5, 4.1];
    let data = stream(&xs);
    let alpha = 0.9;
    for (seed, init) in [(1, GibbsInit::Sequential), (2, GibbsInit::Singletons), (3, GibbsInit::Sequential)] {
        let mut rng = rng_from_seed(seed);
        let mut state = GibbsState::new(&data, &k, &niw, alpha, init, &mut rng).unwrap();
        for _ in 0..seed {
            state.sweep(&data, &niw, &mut rng).unwrap();
        }
        for i in 0..xs.len() {
            let got = state.conditional_probabilities(&data, i, &niw).unwrap();
            let mut want = Vec::new();
            for c in 0..state.cluster_count() {
                let members: Vec<f64> = (0..xs.len()).filter(|&j| j != i && state.cluster_of(j) == c).map(|j| xs[j]).collect();
                if c < 2 {
                    let mut all = train[c].clone();
                    all.extend(&members);
                    want.push((counts[c] + members.len() as f64) * t_pdf(xs[i], &all));
                } else if !members.is_empty() {
                    want.push(members.len() as f64 * t_pdf(xs[i], &members));
                }
            }
            want.push(alpha * t_pdf(xs[i], &[]));
            let z: f64 = want.iter().sum();
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w / z).abs() < 1e-10, "sample {i}: {got:?} vs {want:?}");
            }
        }
        state.check_consistency(&data, Some(&k)).unwrap();
    }
}

#[test]
fn chains_from_both_initializations_agree_with_exact() {
    let train = vec![vec![-0.5, 0.1, 0.4, -0.3]];
    let k = known(&train, &[4.0]);
    let niw = niw_1d(MU0, KAPPA, S0, M);
    let xs = [0.2, 2.6, 3.0, -0.1, 2.2];
    let data = stream(&xs);
    let ex = exact_enumeration_posterior(&data, &k, &niw, 1.0).unwrap();
    let mut runs = Vec::new();
    for (seed, init) in [(10, GibbsInit::Sequential), (11, GibbsInit::Singletons)] {
        let mut cfg = GibbsConfig::new(1.0, 6000, 500, seed);
        cfg.init = init;
        runs.push(run_chain(&data, &k, &niw, &cfg).unwrap());
    }
    for i in 0..xs.len() {
        let (a, b) = (&runs[0].samples[i], &runs[1].samples[i]);
        let se = (a.novel_se.powi(2) + b.novel_se.powi(2)).sqrt();
        assert!((a.novel - b.novel).abs() <= 4.0 * se + 1e-9, "{i}: {} vs {} (se {se})", a.novel, b.novel);
        for r in &runs {
            let s = &r.samples[i];
            assert!((s.novel - ex.p_unlabeled[i]).abs() <= 4.0 * s.novel_se + 1e-9, "{i}: {} vs {}", s.novel, ex.p_unlabeled[i]);
            assert!((s.labeled[0].1 + s.novel - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_rejects_long_streams() {
    let k = known(&[vec![0.0, 1.0]], &[2.0]);
    let data = stream(&[0.0; 11]);
    let e = exact_enumeration_posterior(&data, &k, &niw_1d(MU0, KAPPA, S0, M), 1.0).unwrap_err();
    assert!(e.is_input_error());
}
