//! Metrics and label projection against independent oracles.

mod common;

use deeptransport::metrics::{kappa_weights, nmi, qw_kappa};
use deeptransport::training::{fit_projection, project_labels, ProjectionThresholds};
use proptest::prelude::*;

use common::oracles::{kappa_pairs, label_mix, non_degenerate};

fn codes(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(1u8..=4, 1..max_len)
}

fn pairs() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1usize..80).prop_flat_map(|n| (proptest::collection::vec(1u8..=4, n), proptest::collection::vec(1u8..=4, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kappa_matches_pairwise_oracle((truth, pred) in pairs()) {
        let r = qw_kappa(&truth, &pred);
        if non_degenerate(&truth, &pred) {
            let r = r.unwrap();
            prop_assert!((r.kappa - kappa_pairs(&truth, &pred)).abs() < 1e-12);
            let total: f64 = r.observed.iter().flatten().sum();
            let expected: f64 = r.expected.iter().flatten().sum();
            prop_assert_eq!(total, truth.len() as f64);
            prop_assert!((expected - total).abs() < 1e-9);
        } else {
            prop_assert!(r.is_err());
        }
    }

    #[test]
    fn kappa_of_self_is_one(x in codes(60)) {
        prop_assume!(x.iter().any(|&c| c != x[0]));
        prop_assert_eq!(qw_kappa(&x, &x).unwrap().kappa, 1.0);
    }

    #[test]
    fn kappa_ignores_record_order((truth, pred) in pairs(), rot in 0usize..80) {
        prop_assume!(non_degenerate(&truth, &pred));
        let k = rot % truth.len();
        let mut t2 = truth.clone();
        let mut p2 = pred.clone();
        t2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert_eq!(qw_kappa(&truth, &pred).unwrap().kappa, qw_kappa(&t2, &p2).unwrap().kappa);
    }

    #[test]
    fn nmi_symmetric_and_bounded(
        (x, y) in (1usize..200).prop_flat_map(|n| (proptest::collection::vec(0u8..=4, n), proptest::collection::vec(0u8..=4, n)))
    ) {
        let a = nmi(&x, &y).unwrap();
        prop_assert_eq!(a, nmi(&y, &x).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn nmi_of_self_is_one(x in proptest::collection::vec(0u8..=4, 2..200)) {
        prop_assume!(x.iter().any(|&c| c != x[0]));
        prop_assert_eq!(nmi(&x, &x).unwrap(), 1.0);
    }

    /// Thresholds `a/1000` keep the oracle in exact integer arithmetic.
    #[test]
    fn projection_counts_follow_floor(
        preds in proptest::collection::vec(-3i32..8, 1..400),
        mut q in proptest::collection::vec(1u32..=1000, 3),
    ) {
        q.sort_unstable();
        let preds: Vec<f64> = preds.into_iter().map(|p| p as f64 * 0.5).collect();
        let th = ProjectionThresholds::new([q[0] as f64 / 1000.0, q[1] as f64 / 1000.0, q[2] as f64 / 1000.0]).unwrap();
        let out = project_labels(&preds, &th);
        let n = preds.len() as u64;
        let at_most = |c: u8| out.iter().filter(|&&x| x <= c).count() as u64;
        for k in 0..3 {
            prop_assert_eq!(at_most(k as u8 + 1), q[k] as u64 * n / 1000);
        }
        prop_assert_eq!(at_most(4), n);
        // Ranks are respected: a larger prediction never gets a smaller class.
        for i in 0..preds.len() {
            for j in 0..preds.len() {
                if preds[i] < preds[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
    }

    #[test]
    fn projection_counts_random_thresholds(
        preds in proptest::collection::vec(-10.0f64..10.0, 1..300),
        mut q in proptest::collection::vec(1e-6f64..1.0, 3),
    ) {
        q.sort_by(f64::total_cmp);
        let th = ProjectionThresholds::new([q[0], q[1], q[2]]).unwrap();
        let out = project_labels(&preds, &th);
        let n = preds.len();
        for k in 0..3 {
            let expect = (q[k] * n as f64).floor() as usize;
            let got = out.iter().filter(|&&x| x <= k as u8 + 1).count();
            prop_assert_eq!(got, expect);
        }
    }
}

#[test]
fn weights_by_formula() {
    let w = kappa_weights();
    assert_eq!(w[0][3], 1.0);
    assert!((w[1][2] - 1.0 / 9.0).abs() < 1e-15);
    for i in 0..4 {
        assert_eq!(w[i][i], 0.0);
        for j in 0..4 {
            assert_eq!(w[i][j], w[j][i]);
            assert!((0.0..=1.0).contains(&w[i][j]));
        }
    }
}

#[test]
fn hand_worked_kappa() {
    // O = [[1,1],[1,1]] on classes 1..2; E equals O; kappa is 0.
    let r = qw_kappa(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
    assert!(r.kappa.abs() < 1e-15);
    // Truth [1,2,3,4] against [1,2,4,4]: matched weights sum to 1/9, the
    // 16 cross pairs to 48/9, so kappa = 1 − 4·(1/9)/(48/9) = 11/12.
    let k = qw_kappa(&[1, 2, 3, 4], &[1, 2, 4, 4]).unwrap().kappa;
    assert!((k - 11.0 / 12.0).abs() < 1e-15);
}

#[test]
fn label_mix_fixture() {
    let th = fit_projection(label_mix()).unwrap();
    for (got, want) in th.q.iter().zip([0.882, 0.967, 0.995]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}
