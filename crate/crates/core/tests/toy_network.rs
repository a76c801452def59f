//! The two-layer toy network with inputs in `[−1, 1]²`.

mod common;

use certlab::bounds::{backsub_bounds, box_propagate, relu_relax, InputBox, RelaxationKind};

fn unit_box() -> InputBox {
    InputBox::new(vec![-1.0; 2], vec![1.0; 2]).unwrap()
}

#[test]
fn fixture_forward_pass() {
    let net = common::toy();
    assert_eq!(net.dims(), vec![2, 2, 2]);
    assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![2.0, -2.0]);
}

#[test]
fn fixture_round_trips_through_text() {
    let net = common::toy();
    assert_eq!(certlab::Network::from_text(&net.to_text()).unwrap(), net);
}

#[test]
fn deepz_golden_bounds() {
    let net = common::toy();
    let b = backsub_bounds(&net, RelaxationKind::DeepZ, &unit_box()).unwrap();
    let r = relu_relax(RelaxationKind::DeepZ, -2.0, 2.0).unwrap();
    assert_eq!(r.upper_slope, 0.5);
    assert_eq!(r.lower_slope, 0.5);
    assert_eq!(b.lower(1), [-2.0, -2.0]);
    assert_eq!(b.upper(1), [2.0, 2.0]);
    assert_eq!(b.lower(2), [-1.0, -1.0]);
    // relu(x_{1,1}) equals 2 at x = (1, 1).
    assert_eq!(b.upper(2), [2.0, 2.0]);
    assert_eq!(b.lower(3), [-1.0, -2.0]);
    assert_eq!(b.upper(3), [3.0, 2.0]);
}

#[test]
fn box_bounds_on_toy() {
    let b = box_propagate(&common::toy(), &unit_box()).unwrap();
    assert_eq!(b.lower(2), [0.0, 0.0]);
    assert_eq!(b.upper(2), [2.0, 2.0]);
    assert_eq!(b.lower(3), [0.0, -2.0]);
    assert_eq!(b.upper(3), [4.0, 2.0]);
}

#[test]
fn every_kind_is_sound_on_toy() {
    let net = common::toy();
    let input = unit_box();
    let mut rng = common::rng(1);
    let pts = common::samples(&mut rng, &input, 2000);
    for kind in RelaxationKind::ALL {
        let b = certlab::bounds::bounds_vars(&net.vars(None), kind, &input).unwrap();
        assert!(common::max_violation(&net, &b, &pts) <= 1e-12, "{kind}");
    }
}
