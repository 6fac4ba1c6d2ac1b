//! Belief propagation checked against independent oracles: direct linear
//! solves for Gaussian means, dense inverses for tree variances, and joint
//! enumeration for discrete marginals.

#[path = "support/oracles.rs"]
mod oracles;

use std::collections::BTreeMap;

use bpgnn::bp::*;
use bpgnn::pgm::*;
use bpgnn::rng;
use nalgebra::{DMatrix, DVector};
use oracles::*;
use rand::Rng as _;

#[test]
fn discrete_tree_matches_enumeration() {
    let mut rng = rng::rng(42);
    for case in 0..20 {
        let n = rng.random_range(2..=8);
        let (pgm, diameter) = random_discrete_tree(n, 3, &mut rng);
        let mut msgs = DiscreteMessages::uniform(&pgm);
        let mut marg = Vec::new();
        for _ in 0..diameter + 1 {
            let (next, m) = discrete_bp_step(&pgm, &msgs, &noiseless(0.0), None).unwrap();
            msgs = next;
            marg = m;
        }
        let exact = enumerate_marginals(&pgm);
        for i in 0..n {
            for x in 0..pgm.states(i) {
                assert!(
                    (marg[i][x] - exact[i][x]).abs() < 1e-10,
                    "case {case} vertex {i}: {} vs {}",
                    marg[i][x],
                    exact[i][x]
                );
            }
        }
    }
}

#[test]
fn five_vertex_binary_tree_matches_enumeration() {
    let mut pairwise = BTreeMap::new();
    for (a, b, c) in [(0, 1, 2.0), (1, 2, 0.5), (1, 3, 3.0), (3, 4, 1.5)] {
        pairwise.insert((a, b), DMatrix::from_row_slice(2, 2, &[c, 1.0, 1.0, c]));
    }
    let singleton = vec![vec![1.0, 2.0], vec![1.0, 1.0], vec![3.0, 1.0], vec![0.5, 1.0], vec![1.0, 4.0]];
    let pgm = DiscretePgm::new(singleton, pairwise).unwrap();
    let mut msgs = DiscreteMessages::uniform(&pgm);
    let mut marg = Vec::new();
    for _ in 0..4 {
        let (next, m) = discrete_bp_step(&pgm, &msgs, &noiseless(0.0), None).unwrap();
        msgs = next;
        marg = m;
    }
    let exact = enumerate_marginals(&pgm);
    for i in 0..5 {
        for x in 0..2 {
            assert!((marg[i][x] - exact[i][x]).abs() < 1e-10);
        }
    }
}

#[test]
fn discrete_marginals_stay_normalized_under_noise_and_damping() {
    let mut rng = rng::rng(3);
    let (pgm, _) = random_discrete_tree(6, 3, &mut rng);
    // close a loop so messages never settle exactly
    let mut pairwise: BTreeMap<(usize, usize), DMatrix<f64>> = pgm.edges().map(|(a, b)| {
        let t = DMatrix::from_fn(pgm.states(a), pgm.states(b), |x, y| pgm.psi(a, b, x, y));
        ((a, b), t)
    }).collect();
    if !pairwise.contains_key(&(0, 5)) {
        pairwise.insert((0, 5), DMatrix::from_fn(pgm.states(0), pgm.states(5), |x, y| 1.0 + (x + y) as f64));
    }
    let singleton = (0..6).map(|i| pgm.singleton(i).to_vec()).collect();
    let pgm = DiscretePgm::new(singleton, pairwise).unwrap();
    let cfg = BpConfig {
        gamma: 0.6,
        noise_sigma: 0.3,
        init: MessageInit::Vacuous,
    };
    let mut noise = rng::rng(5);
    let mut msgs = DiscreteMessages::uniform(&pgm);
    for _ in 0..30 {
        let (next, marg) = discrete_bp_step(&pgm, &msgs, &cfg, Some(&mut noise)).unwrap();
        for m in &marg {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for log in next.log.values() {
            let total: f64 = log.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        msgs = next;
    }
}

#[test]
fn gaussian_tree_matches_exact_means_and_variances() {
    let mut rng = rng::rng(17);
    for case in 0..20 {
        let n = rng.random_range(2..=10);
        let (pgm, diameter) = random_gaussian_tree(n, &mut rng);
        let b = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let mut msgs = GaussianMessages::new(&pgm, MessageInit::Vacuous);
        let mut last = None;
        for t in 0..=diameter {
            let out = gaussian_bp_step(&pgm, &msgs, &b, &noiseless(0.0), t, None).unwrap();
            msgs = out.messages.clone();
            last = Some(out);
        }
        let out = last.unwrap();
        // one more step changes nothing
        let again = gaussian_bp_step(&pgm, &msgs, &b, &noiseless(0.0), 0, None).unwrap();
        assert!(again.messages.max_change(&msgs) < 1e-12, "case {case} not converged");

        let mu = exact_marginal_means(&pgm, &b).unwrap();
        let var = exact_marginal_variances(&pgm).unwrap();
        for i in 0..n {
            assert!((out.means[i] - mu[i]).abs() < 1e-8, "case {case} mean {i}");
            assert!((out.sigmas[i] - var.exact[i].sqrt()).abs() < 1e-8, "case {case} sigma {i}");
        }
    }
}

#[test]
fn converged_loopy_means_are_exact() {
    let mut converged = 0;
    for seed in 0..50u64 {
        let n = 4 + (seed as usize % 9);
        let pgm = random_precision_matrix(&PrecisionSpec::new(n, 0.6, 0.2), seed).unwrap();
        let mut brng = rng::rng(seed + 1000);
        let b = DVector::from_fn(n, |_, _| brng.random_range(-2.0..2.0));
        let cfg = noiseless(0.5);
        let mut msgs = GaussianMessages::new(&pgm, MessageInit::Vacuous);
        for t in 0..5000 {
            let out = match gaussian_bp_step(&pgm, &msgs, &b, &cfg, t, None) {
                Ok(out) => out,
                Err(_) => break,
            };
            let change = out.messages.max_change(&msgs);
            msgs = out.messages;
            if change < 1e-9 {
                let mu = exact_marginal_means(&pgm, &b).unwrap();
                for i in 0..n {
                    assert!((out.means[i] - mu[i]).abs() < 1e-6, "seed {seed}");
                }
                converged += 1;
                break;
            }
        }
    }
    eprintln!("{converged}/50 converged");
    assert!(converged > 0);
}

#[test]
fn marginal_means_invert_precision_products() {
    let mut rng = rng::rng(8);
    for seed in 0..20 {
        let pgm = random_precision_matrix(&PrecisionSpec::new(9, 0.6, 0.2), seed).unwrap();
        let x = DVector::from_fn(9, |_, _| rng.random_range(-3.0..3.0));
        let b = pgm.precision() * &x;
        let mu = exact_marginal_means(&pgm, &b).unwrap();
        assert!((mu - x).amax() < 1e-9);
    }
}

#[test]
fn generated_matrices_are_spd_with_fixed_spectrum() {
    for seed in 0..100u64 {
        let n = 4 + (seed as usize % 15);
        let (pgm, mut spectrum) =
            random_precision_matrix_with_spectrum(&PrecisionSpec::new(n, 0.6, 0.2), seed).unwrap();
        let a = pgm.precision();
        assert_eq!(a, &a.transpose());
        assert!(a.clone().cholesky().is_some());
        let mut eig: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        spectrum.sort_by(f64::total_cmp);
        for (e, s) in eig.iter().zip(&spectrum) {
            assert!((e - s).abs() < 1e-8, "seed {seed}: {e} vs {s}");
        }
    }
}

#[test]
fn bias_series_is_reproducible_per_seed() {
    let sched = BiasSchedule::default();
    let a = generate_bias_series_n(5, &sched, 77).unwrap();
    let b = generate_bias_series_n(5, &sched, 77).unwrap();
    assert_eq!(a, b);
    let c = generate_bias_series_n(5, &sched, 78).unwrap();
    assert_ne!(a, c);
    // vertices draw from separate streams
    for i in 1..5 {
        assert_ne!(a.values.row(0), a.values.row(i));
    }
}

#[test]
fn noisy_targets_scatter_around_reference() {
    let pgm = random_precision_matrix(&PrecisionSpec::new(8, 0.6, 0.2), 4).unwrap();
    let sched = BiasSchedule {
        duration: 60,
        ..BiasSchedule::default()
    };
    let ds = generate_traces(0, &pgm, &sched, &BpConfig::default(), 40, &SplitFractions::default(), 9).unwrap();
    let diff = &ds.targets - &ds.reference;
    let mean = diff.mean().unwrap();
    let sd = diff.std(0.0);
    assert!(sd > 0.0);
    assert!(mean.abs() < 0.1 * sd, "mean {mean}, sd {sd}");
}

#[test]
fn oracle_summaries_agree_with_thresholds() {
    let e = tree_oracle_errors(5, 1);
    assert!(e.discrete < 1e-10 && e.mean < 1e-8 && e.sigma < 1e-8, "{e:?}");
    let x = loopy_mean_exactness(5, BpConfig::default().gamma, 2);
    assert_eq!(x.converged + x.not_converged, 5);
    assert!(x.max_error < 1e-6, "{x:?}");
}
