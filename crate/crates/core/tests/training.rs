//! Certified training behaviour on small synthetic problems.

mod common;

use certlab::bounds::RelaxationKind;
use certlab::data::synth;
use certlab::evaluation::{certified_fraction, CertifyOptions};
use certlab::training::*;
use certlab::Network;

fn cfg(kind: RelaxationKind) -> TrainConfig {
    TrainConfig {
        kind: TrainKind::Relax(kind),
        eps_train: 0.05,
        eps_test: 0.05,
        epochs: 6,
        warmup: 1,
        rampup: 3,
        lr: 5e-3,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

fn l1_norm(net: &Network) -> f64 {
    net.params().iter().map(|v| v.abs()).sum()
}

#[test]
fn kappa_one_reproduces_natural_training() {
    let data = synth(96, 5, 1);
    let mut natural = Network::build(&[5, 8, 2], 4).unwrap();
    let mut certified = natural.clone();
    let nat_cfg = TrainConfig {
        eps_train: 0.0,
        kappa_start: 1.0,
        kappa_end: 1.0,
        ..cfg(RelaxationKind::Box)
    };
    let cert_cfg = TrainConfig {
        kappa_start: 1.0,
        kappa_end: 1.0,
        ..cfg(RelaxationKind::Crown)
    };
    let a = train(&mut natural, &data, &nat_cfg).unwrap();
    let b = train(&mut certified, &data, &cert_cfg).unwrap();
    for (p, q) in natural.params().iter().zip(certified.params()) {
        assert!((p - q).abs() <= 1e-12);
    }
    for (x, y) in a.iter().zip(&b) {
        assert!((x.nat_loss - y.nat_loss).abs() <= 1e-12);
    }
}

#[test]
fn l1_penalty_shrinks_weights() {
    let data = synth(64, 4, 2);
    let base = Network::build(&[4, 10, 2], 5).unwrap();
    let mut plain = base.clone();
    let mut sparse = base.clone();
    train(&mut plain, &data, &cfg(RelaxationKind::Box)).unwrap();
    train(&mut sparse, &data, &TrainConfig { l1: 0.05, ..cfg(RelaxationKind::Box) }).unwrap();
    assert!(l1_norm(&sparse) < l1_norm(&plain), "{} vs {}", l1_norm(&sparse), l1_norm(&plain));
}

#[test]
fn training_is_deterministic() {
    let data = synth(48, 4, 3);
    for kind in [RelaxationKind::DeepZ, RelaxationKind::Triangle] {
        let mut a = Network::build(&[4, 6, 2], 6).unwrap();
        let mut b = a.clone();
        let ha = train(&mut a, &data, &TrainConfig { epochs: 3, warmup: 0, rampup: 1, ..cfg(kind) }).unwrap();
        let hb = train(&mut b, &data, &TrainConfig { epochs: 3, warmup: 0, rampup: 1, ..cfg(kind) }).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(history_csv(&ha), history_csv(&hb));
    }
}

#[test]
fn schedule_is_logged_per_epoch() {
    let data = synth(32, 3, 4);
    let mut net = Network::build(&[3, 4, 2], 7).unwrap();
    let c = TrainConfig { epochs: 6, warmup: 2, rampup: 2, kappa_start: 1.0, kappa_end: 0.5, ..cfg(RelaxationKind::Box) };
    let h = train(&mut net, &data, &c).unwrap();
    let eps: Vec<f64> = h.iter().map(|s| s.eps).collect();
    assert_eq!(eps, vec![0.0, 0.0, 0.0, 0.025, 0.05, 0.05]);
    let kappa: Vec<f64> = h.iter().map(|s| s.kappa).collect();
    assert_eq!(kappa, vec![1.0, 1.0, 1.0, 0.75, 0.5, 0.5]);
    assert!(history_csv(&h).starts_with(HISTORY_HEADER));
}

#[test]
fn box_training_beats_natural_training_on_certified_robustness() {
    let data = synth(200, 6, 5);
    let base = Network::build(&[6, 16, 2], 8).unwrap();
    let mut natural = base.clone();
    let mut robust = base;
    let common = TrainConfig { eps_train: 0.08, epochs: 12, warmup: 1, rampup: 5, ..cfg(RelaxationKind::Box) };
    train(&mut natural, &data, &TrainConfig { kappa_end: 1.0, ..common.clone() }).unwrap();
    train(&mut robust, &data, &common).unwrap();
    let opts = CertifyOptions::default();
    let cr_nat = certified_fraction(&natural, RelaxationKind::Box, &data, 0.08, &opts).unwrap();
    let cr_rob = certified_fraction(&robust, RelaxationKind::Box, &data, 0.08, &opts).unwrap();
    assert!(cr_rob > cr_nat, "certified training {cr_rob} vs natural {cr_nat}");
}

#[test]
fn hybrid_and_lp_kinds_train_without_errors() {
    let data = synth(24, 3, 6);
    for kind in [TrainKind::CrownIbpHybrid, TrainKind::Relax(RelaxationKind::Parallelogram)] {
        for blend in [Mixing::Logits, Mixing::Loss] {
            let mut net = Network::build(&[3, 5, 2], 9).unwrap();
            let c = TrainConfig { kind, hybrid_blend: blend, kappa_mixing: blend, epochs: 3, warmup: 0, rampup: 2, ..cfg(RelaxationKind::Box) };
            let h = train(&mut net, &data, &c).unwrap();
            assert!(h.iter().all(|s| s.cert_loss.is_finite() && s.cert_loss >= s.nat_loss - 1e-9), "{kind}");
        }
    }
}

#[test]
fn config_text_round_trips_for_every_preset() {
    for (name, c) in presets() {
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c, "{name}");
    }
}

#[test]
fn pgd_finds_attacks_only_within_the_ball() {
    let data = synth(64, 4, 7);
    let mut net = Network::build(&[4, 8, 2], 10).unwrap();
    train(&mut net, &data, &TrainConfig { kappa_end: 1.0, ..cfg(RelaxationKind::Box) }).unwrap();
    let opts = PgdOptions::default();
    for (x, &y) in data.inputs.iter().zip(&data.labels).take(20) {
        let (broken, adv) = pgd_attack(&net, x, y, 0.1, &opts).unwrap();
        assert!(adv.iter().zip(x).all(|(a, c)| (a - c).abs() <= 0.1 + 1e-12 && (0.0..=1.0).contains(a)));
        if broken {
            assert_ne!(certlab::tensor::argmax(&net.forward(&adv).unwrap()), y);
        }
    }
}
