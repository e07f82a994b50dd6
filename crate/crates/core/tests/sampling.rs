mod common;

use common::*;
use fastmix::sampling::{conditional, estimate_marginals, marginal_curve};
use fastmix::{GibbsChain, SamplePool, Scan};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Conditionals equal ratios of enumerated joint probabilities.
    #[test]
    fn conditional_matches_joint_ratios(seed in any::<u64>(), site in 0usize..4) {
        let m = random_model(&mut rng(seed), 4, 3, 0.7, 2.0);
        let table = joint(&m);
        let x = table[(seed as usize) % table.len()].0.clone();
        let got = conditional(&m, &x, site).unwrap();
        let weights: Vec<f64> = (0..m.card(site))
            .map(|a| {
                let mut y = x.clone();
                y[site] = a;
                table.iter().find(|(z, _)| *z == y).unwrap().1
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for (g, w) in got.iter().zip(&weights) {
            prop_assert!((g - w / total).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_gives_identical_trajectories(seed in any::<u64>(), random_scan in any::<bool>()) {
        let m = random_model(&mut rng(seed), 5, 3, 0.5, 1.0);
        let scan = if random_scan { Scan::Random } else { Scan::Systematic };
        let mut a = GibbsChain::new(&m, scan, seed, 3);
        let mut b = GibbsChain::new(&m, scan, seed, 3);
        for _ in 0..50 {
            a.sweep(&m);
            b.sweep(&m);
            prop_assert_eq!(a.state(), b.state());
        }
        prop_assert_eq!(a.sweeps(), 50);
    }
}

#[test]
fn long_runs_approach_enumerated_marginals() {
    for (seed, scan) in [(0, Scan::Systematic), (1, Scan::Random)] {
        let m = random_model(&mut rng(seed), 4, 3, 0.6, 1.0);
        let truth = unary_marginals(&m);
        let mut chain = GibbsChain::new(&m, scan, 11, 0);
        let est = estimate_marginals(&mut chain, &m, 200_000, 1_000).unwrap();
        assert_eq!(est.count, 199_000);
        for (row, t) in est.frequencies.iter().zip(&truth) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (f, p) in row.iter().zip(t) {
                assert!((f - p).abs() < 0.01, "{scan:?}: {f} vs {p}");
            }
        }
    }
}

#[test]
fn curve_checkpoints_agree_with_single_estimates() {
    let m = random_model(&mut rng(5), 3, 2, 1.0, 1.0);
    let checkpoints = [10, 100, 1000];
    let mut chain = GibbsChain::new(&m, Scan::Systematic, 9, 0);
    let curve = marginal_curve(&mut chain, &m, &checkpoints, 0.1).unwrap();
    let mut fresh = GibbsChain::new(&m, Scan::Systematic, 9, 0);
    let last = estimate_marginals(&mut fresh, &m, 1000, 100).unwrap();
    assert_eq!(curve[2].frequencies, last.frequencies);
    assert_eq!(curve.iter().map(|e| e.count).collect::<Vec<_>>(), vec![9, 90, 900]);
    assert!(marginal_curve(&mut chain, &m, &[5, 5], 0.1).is_err());
}

#[test]
fn pool_is_independent_of_thread_count() {
    let m = random_model(&mut rng(2), 6, 3, 0.5, 1.0);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let mut pool = SamplePool::new(&m, 64, 17, 5).unwrap();
            pool.advance(&m);
            pool.states().map(<[usize]>::to_vec).collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(4));
    assert!(SamplePool::new(&m, 0, 1, 0).is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    let m = random_model(&mut rng(8), 3, 2, 1.0, 1.0);
    assert!(GibbsChain::with_state(&m, vec![0, 5, 0], Scan::Systematic, 1, 0).is_err());
    assert!(GibbsChain::with_state(&m, vec![0, 1], Scan::Systematic, 1, 0).is_err());
    let mut chain = GibbsChain::new(&m, Scan::Systematic, 1, 0);
    assert!(estimate_marginals(&mut chain, &m, 10, 10).is_err());
}
