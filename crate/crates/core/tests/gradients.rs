//! Tape gradients of output lower bounds against central differences.

mod common;

use certlab::bounds::RelaxationKind;

const BACKSUB: [RelaxationKind; 5] = [
    RelaxationKind::Box,
    RelaxationKind::HBox,
    RelaxationKind::DeepZ,
    RelaxationKind::Crown,
    RelaxationKind::CrownIbpR,
];

/// Checks `kind` at `points` differentiable points and returns the worst error.
fn worst_error(kind: RelaxationKind, points: usize, seed: u64) -> f64 {
    let mut rng = common::rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut tries = 0;
    let mut nonzero = 0;
    while checked < points {
        tries += 1;
        assert!(tries < 20 * points, "{kind}: too few differentiable points");
        let net = common::random_net(&mut rng, 2, 5);
        let (_, _, input) = common::random_box(&mut rng, net.input_dim(), 0.3);
        let Some(fd) = common::smooth_central_differences(&net, kind, &input, 0, 1e-6, 1e-4) else {
            continue;
        };
        let g = common::param_gradient(&net, kind, &input, 0);
        worst = worst.max(common::rel_err(&g, &fd));
        nonzero += usize::from(fd.iter().any(|v| v.abs() > 1e-6));
        checked += 1;
    }
    assert!(2 * nonzero > points, "{kind}: mostly constant bounds");
    worst
}

#[test]
fn backsub_gradients_match_finite_differences() {
    for (k, kind) in BACKSUB.into_iter().enumerate() {
        let e = worst_error(kind, 15, 100 + k as u64);
        assert!(e <= 1e-4, "{kind}: relative error {e}");
    }
}

#[test]
fn lp_gradients_match_finite_differences() {
    for (k, kind) in [RelaxationKind::Triangle, RelaxationKind::Parallelogram].into_iter().enumerate() {
        let e = worst_error(kind, 15, 200 + k as u64);
        assert!(e <= 1e-3, "{kind}: relative error {e}");
    }
}

#[test]
fn crown0_gradients_match_finite_differences() {
    let e = worst_error(RelaxationKind::Crown0, 10, 300);
    assert!(e <= 1e-4, "relative error {e}");
}
