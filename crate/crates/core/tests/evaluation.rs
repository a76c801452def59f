//! Certification, CR curves and reports.

mod common;

use certlab::bounds::RelaxationKind;
use certlab::data::synth;
use certlab::evaluation::*;
use certlab::training::{train, PgdOptions, TrainConfig, TrainKind};
use certlab::Network;

fn trained() -> (Network, certlab::data::Dataset) {
    let data = synth(120, 5, 11);
    let mut net = Network::build(&[5, 12, 2], 12).unwrap();
    let cfg = TrainConfig {
        kind: TrainKind::Relax(RelaxationKind::Box),
        eps_train: 0.05,
        epochs: 8,
        warmup: 1,
        rampup: 4,
        lr: 5e-3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    train(&mut net, &data, &cfg).unwrap();
    (net, data)
}

#[test]
fn certified_at_most_pgd_at_most_accuracy() {
    let (net, data) = trained();
    let kinds = [RelaxationKind::Box, RelaxationKind::Crown, RelaxationKind::Triangle];
    for eps in [0.0, 0.02, 0.05, 0.1] {
        let r = evaluate(&net, &data, eps, &kinds, &CertifyOptions::default(), &PgdOptions::default()).unwrap();
        assert!(r.pgd <= r.acc + 1e-12, "eps {eps}: {r:?}");
        for (k, &cr) in &r.cr {
            assert!(cr <= r.pgd + 1e-12, "eps {eps} {k}: {r:?}");
        }
    }
}

#[test]
fn bisection_curve_matches_pointwise_evaluation() {
    let (net, data) = trained();
    let opts = CertifyOptions::default();
    for kind in [RelaxationKind::Box, RelaxationKind::Triangle] {
        let curve = cr_curve(&net, kind, &data.head(40), 0.2, 9, &opts).unwrap();
        for (e, c) in curve.eps.iter().zip(&curve.certified) {
            let direct = certified_fraction(&net, kind, &data.head(40), *e, &opts).unwrap();
            assert!((c - direct).abs() <= 1e-12, "{kind} at {e}: {c} vs {direct}");
        }
        assert!(curve.certified.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn elision_never_loses_certificates() {
    let (net, data) = trained();
    let with = CertifyOptions::default();
    let without = CertifyOptions { elision: false, ..with };
    for kind in [RelaxationKind::Box, RelaxationKind::DeepZ, RelaxationKind::Crown, RelaxationKind::Parallelogram] {
        for (x, &y) in data.inputs.iter().zip(&data.labels).take(40) {
            if certify(&net, kind, x, y, 0.05, &without).unwrap() {
                assert!(certify(&net, kind, x, y, 0.05, &with).unwrap(), "{kind}");
            }
        }
    }
}

#[test]
fn curve_csv_and_auc() {
    let (net, data) = trained();
    let curve = cr_curve(&net, RelaxationKind::Box, &data.head(10), 0.1, 5, &CertifyOptions::default()).unwrap();
    let csv = curve.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "eps,certified");
    assert_eq!(csv.lines().count(), 6);
    let auc = cr_auc(&curve, false);
    assert!((0.0..=0.1 + 1e-12).contains(&auc));
    assert!((cr_auc(&curve, true) - 100.0 * auc).abs() <= 1e-9);
}

#[test]
fn cross_matrix_has_one_column_per_kind() {
    let (net, data) = trained();
    let kinds = [RelaxationKind::Box, RelaxationKind::HBox];
    let row = cross_matrix(&net, "box", &kinds, &data.head(10), 0.05, &CertifyOptions::default()).unwrap();
    let csv = cross_csv(&[row]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "train,box,hbox");
    assert!(lines.next().unwrap().starts_with("box,"));
}

#[test]
fn negative_radius_is_rejected() {
    let (net, data) = trained();
    assert!(certify(&net, RelaxationKind::Box, &data.inputs[0], data.labels[0], -0.1, &CertifyOptions::default()).is_err());
}
