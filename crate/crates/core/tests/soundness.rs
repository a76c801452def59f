//! Sampled soundness of every relaxation on random networks.

mod common;

use certlab::bounds::{bounds_vars, InputBox, RelaxationKind};
use proptest::prelude::*;

#[test]
fn every_kind_contains_sampled_activations() {
    let mut rng = common::rng(7);
    for case in 0..40 {
        let net = common::random_net(&mut rng, 3, 8);
        let (_, _, input) = common::random_box(&mut rng, net.input_dim(), 0.5);
        let pts = common::samples(&mut rng, &input, 300);
        for kind in RelaxationKind::ALL {
            let b = bounds_vars(&net.vars(None), kind, &input).unwrap();
            let v = common::max_violation(&net, &b, &pts);
            assert!(v <= 1e-9, "case {case} {kind}: violation {v}");
        }
    }
}

#[test]
fn clipped_boxes_stay_sound() {
    let mut rng = common::rng(8);
    for _ in 0..20 {
        let net = common::random_net(&mut rng, 2, 6);
        let x: Vec<f64> = (0..net.input_dim()).map(|i| if i % 2 == 0 { 0.02 } else { 0.97 }).collect();
        let input = InputBox::around(&x, 0.1, Some((0.0, 1.0))).unwrap();
        assert!(input.lower.iter().all(|&v| v >= 0.0) && input.upper.iter().all(|&v| v <= 1.0));
        let pts = common::samples(&mut rng, &input, 200);
        for kind in RelaxationKind::ALL {
            let b = bounds_vars(&net.vars(None), kind, &input).unwrap();
            assert!(common::max_violation(&net, &b, &pts) <= 1e-9, "{kind}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backsub_bounds_are_ordered_and_sound(seed in any::<u64>(), eps in 1e-3f64..1.0) {
        let mut rng = common::rng(seed);
        let net = common::random_net(&mut rng, 3, 6);
        let x: Vec<f64> = (0..net.input_dim()).map(|i| (i as f64 * 0.37).fract()).collect();
        let input = InputBox::around(&x, eps, None).unwrap();
        let pts = common::samples(&mut rng, &input, 64);
        for kind in RelaxationKind::ALL.into_iter().filter(|k| !k.is_lp()) {
            let b = bounds_vars(&net.vars(None), kind, &input).unwrap();
            for i in 0..=b.depth() {
                for (l, u) in b.lower(i).iter().zip(b.upper(i)) {
                    prop_assert!(l <= u, "{} layer {}: {} > {}", kind, i, l, u);
                }
            }
            prop_assert!(common::max_violation(&net, &b, &pts) <= 1e-9);
        }
    }

    #[test]
    fn point_boxes_are_exact_for_box(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let net = common::random_net(&mut rng, 3, 6);
        let x: Vec<f64> = (0..net.input_dim()).map(|i| (i as f64 * 0.61).fract()).collect();
        let b = bounds_vars(&net.vars(None), RelaxationKind::Box, &InputBox::around(&x, 0.0, None).unwrap()).unwrap();
        let acts = net.activations(&x).unwrap();
        for (i, a) in acts.iter().enumerate() {
            for (j, &v) in a.iter().enumerate() {
                prop_assert!((b.lower(i)[j] - v).abs() <= 1e-12 && (b.upper(i)[j] - v).abs() <= 1e-12);
            }
        }
    }
}
