mod common;

use common::*;
use fastmix::exact::{brute_force, exact_kl, gibbs_transition_operator, is_forest, tree_marginals, StateSpace, BRUTE_FORCE_CAP};
use fastmix::generators::{ising_coupling, ising_unary};
use fastmix::{EdgePotential, PairwiseMrf, Scan};
use proptest::prelude::*;

fn lookup(joint: &[(Vec<usize>, f64)], space: &StateSpace) -> Vec<f64> {
    let mut p = vec![0.0; space.size()];
    for (x, v) in joint {
        p[space.index(x)] = *v;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn brute_force_matches_direct_summation(seed in any::<u64>()) {
        let m = random_model(&mut rng(seed), 4, 3, 0.6, 2.0);
        let (_, table) = brute_force(&m).unwrap();
        let truth = unary_marginals(&m);
        for (a, b) in table.unary.iter().flatten().zip(truth.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!(table.normalization_error(&m) < 1e-12);
    }

    #[test]
    fn tree_marginals_match_brute_force_on_forests(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_forest(&mut r, 6, 3, 0.8, 2.5);
        let all: Vec<usize> = (0..m.num_edges()).collect();
        prop_assert!(is_forest(&m, &all));
        let (lz_tree, tree) = tree_marginals(&m, &all).unwrap();
        let (lz, bf) = brute_force(&m).unwrap();
        prop_assert!((lz_tree - lz).abs() < 1e-10);
        for (a, b) in tree.unary.iter().flatten().zip(bf.unary.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in tree.pairwise.iter().flatten().zip(bf.pairwise.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_matches_direct_summation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_model(&mut r, 3, 3, 0.7, 1.5);
        let noise: Vec<f64> = p.params().to_vec();
        let q = p.with_params(noise.iter().map(|v| v * 0.5).collect()).unwrap();
        let got = exact_kl(&p, &q).unwrap();
        prop_assert!((got - kl(&p, &q)).abs() < 1e-12);
        prop_assert!(exact_kl(&p, &p).unwrap().abs() < 1e-12);
    }
}

#[test]
fn subgraph_marginals_leave_untouched_variables_uniform() {
    let m = PairwiseMrf::new(
        vec![2, 3, 2],
        vec![ising_unary(0, 0.7), ising_coupling(0, 2, 1.2), three_state_unary(1)],
    )
    .unwrap();
    let chain: Vec<usize> = vec![0, 1];
    let (_, t) = tree_marginals(&m, &chain).unwrap();
    for v in &t.unary[1] {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

fn three_state_unary(i: usize) -> EdgePotential {
    let column = [0.4, -0.2, 1.0];
    EdgePotential { i, j: i, table: (0..9).map(|k| column[k / 3]).collect() }
}

#[test]
fn cycles_are_rejected() {
    let m = PairwiseMrf::new(
        vec![2, 2, 2],
        vec![ising_coupling(0, 1, 1.0), ising_coupling(1, 2, 1.0), ising_coupling(0, 2, 1.0)],
    )
    .unwrap();
    assert!(!is_forest(&m, &[0, 1, 2]));
    assert!(tree_marginals(&m, &[0, 1, 2]).is_err());
    assert!(is_forest(&m, &[0, 2]));
}

#[test]
fn transition_operators_are_stochastic_and_preserve_the_joint() {
    for seed in 0..8 {
        let m = random_model(&mut rng(seed), 4, 3, 0.6, 1.5);
        let space = StateSpace::new(&m, BRUTE_FORCE_CAP, "test").unwrap();
        let p = lookup(&joint(&m), &space);
        for scan in [Scan::Random, Scan::Systematic] {
            let op = gibbs_transition_operator(&m, scan).unwrap();
            for row in op.matrix.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
            for (a, b) in op.stationary.iter().zip(&p) {
                assert!((a - b).abs() < 1e-10, "{scan:?}");
            }
            // pi P = pi for the enumerated joint itself.
            for y in 0..space.size() {
                let flow: f64 = (0..space.size()).map(|x| p[x] * op.matrix[(x, y)]).sum();
                assert!((flow - p[y]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn distance_to_stationarity_is_nonincreasing() {
    let m = random_model(&mut rng(3), 3, 2, 1.0, 2.0);
    let op = gibbs_transition_operator(&m, Scan::Random).unwrap();
    let steps: Vec<usize> = (0..40).collect();
    let d = op.distance_curve(&steps);
    assert!((d[0] - (1.0 - op.stationary.min())).abs() < 1e-12);
    assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn state_space_over_the_cap_is_refused() {
    let m = PairwiseMrf::new(vec![2; 21], (0..21).map(|i| ising_unary(i, 0.1)).collect()).unwrap();
    assert!(brute_force(&m).is_err());
}
