mod common;

use common::{grad_suite, uniform};
use mct::gradcheck::{check_inputs, GradCheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use proptest::prelude::*;

fn assert_all_pass(reports: &[GradCheck]) {
    let bad: Vec<_> = reports.iter().filter(|r| !r.passes(DEFAULT_TOLERANCE)).collect();
    assert!(bad.is_empty(), "gradient mismatches: {bad:#?}");
    assert!(reports.iter().all(|r| r.checked > 0));
}

#[test]
fn every_op_matches_finite_differences() {
    let reports = grad_suite::ops().unwrap();
    assert!(reports.len() >= 24);
    assert_all_pass(&reports);
}

#[test]
fn classifier_path_matches_finite_differences() {
    assert_all_pass(&grad_suite::classifier_path(6).unwrap());
}

#[test]
fn pretraining_path_matches_finite_differences() {
    assert_all_pass(&grad_suite::pretrain_path(6).unwrap());
}

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=5, 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_and_layernorm_on_random_shapes(s in shape(), seed in any::<u64>()) {
        let d = *s.last().unwrap();
        let x = uniform(&s, seed);
        let r = uniform(&s, seed ^ 1);
        let g = uniform(&[d], seed ^ 2);
        let b = uniform(&[d], seed ^ 3);
        let reports = check_inputs(&[x, r, g, b], DEFAULT_STEP, |t, v| {
            let y = t.softmax(v[0])?;
            let y = t.layernorm(y, v[2], v[3], 1e-5)?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }).unwrap();
        for rep in reports {
            prop_assert!(rep.passes(DEFAULT_TOLERANCE), "{rep:?}");
        }
    }

    #[test]
    fn linear_gelu_mean_on_random_shapes(
        lead in prop::collection::vec(1usize..=4, 1..=3),
        din in 1usize..=5,
        dout in 1usize..=5,
        seed in any::<u64>(),
    ) {
        let mut xs = lead.clone();
        xs.push(din);
        let x = uniform(&xs, seed);
        let w = uniform(&[din, dout], seed ^ 4);
        let b = uniform(&[dout], seed ^ 5);
        let reports = check_inputs(&[x, w, b], DEFAULT_STEP, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            let y = t.gelu(y)?;
            let axis = t.shape(y).len() - 1;
            let y = t.mean_axis(y, axis)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }).unwrap();
        for rep in reports {
            prop_assert!(rep.passes(DEFAULT_TOLERANCE), "{rep:?}");
        }
    }
}
