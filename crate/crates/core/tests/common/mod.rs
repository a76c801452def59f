//! Shared generators and oracles for the integration suites.
#![allow(dead_code)]

use certlab::bounds::{bounds_vars, InputBox, LayerBounds, RelaxationKind};
use certlab::tensor::Tape;
use certlab::network::Network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dims with 1..=`max_hidden` hidden layers of width 1..=`max_width`.
pub fn random_dims(rng: &mut ChaCha8Rng, max_hidden: usize, max_width: usize) -> Vec<usize> {
    let mut dims = vec![rng.gen_range(1..=4)];
    for _ in 0..rng.gen_range(1..=max_hidden) {
        dims.push(rng.gen_range(1..=max_width));
    }
    dims.push(rng.gen_range(1..=3));
    dims
}

/// Network with uniform `±1/√fan_in` weights and biases in `±0.3`.
pub fn random_net(rng: &mut ChaCha8Rng, max_hidden: usize, max_width: usize) -> Network {
    let dims = random_dims(rng, max_hidden, max_width);
    let mut net = Network::build(&dims, rng.gen()).unwrap();
    let mut theta = net.params();
    // Biases follow each weight block; perturb everything so that zero
    // biases do not make every box symmetric.
    for t in theta.iter_mut() {
        if *t == 0.0 {
            *t = rng.gen_range(-0.3..0.3);
        }
    }
    net.set_params(&theta).unwrap();
    net
}

/// Random unclipped box around a point in `[0, 1]^n` with radius in `(0, max_eps]`.
pub fn random_box(rng: &mut ChaCha8Rng, dim: usize, max_eps: f64) -> (Vec<f64>, f64, InputBox) {
    let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let eps = rng.gen_range(1e-3..=max_eps);
    let input = InputBox::around(&x, eps, None).unwrap();
    (x, eps, input)
}

/// Uniform samples of the box plus all its corners (up to 2^6 of them).
pub fn samples(rng: &mut ChaCha8Rng, input: &InputBox, n: usize) -> Vec<Vec<f64>> {
    let d = input.dim();
    let mut out = Vec::with_capacity(n + (1 << d.min(6)));
    for mask in 0..(1usize << d.min(6)) {
        out.push(
            (0..d)
                .map(|i| if i < 6 && mask >> i & 1 == 1 { input.upper[i] } else { input.lower[i] })
                .collect(),
        );
    }
    while out.len() < n {
        out.push((0..d).map(|i| rng.gen_range(input.lower[i]..=input.upper[i])).collect());
    }
    out
}

/// Largest amount by which any activation of any sample leaves `b`.
pub fn max_violation(net: &Network, b: &LayerBounds, points: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for x in points {
        for (i, act) in net.activations(x).unwrap().iter().enumerate() {
            for (j, &v) in act.iter().enumerate() {
                worst = worst.max(b.lower(i)[j] - v).max(v - b.upper(i)[j]);
            }
        }
    }
    worst
}

/// Largest `|a − b|` over every bound of every layer.
pub fn max_bound_gap(a: &LayerBounds, b: &LayerBounds) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=a.depth() {
        for (x, y) in a.lower(i).iter().zip(b.lower(i)) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in a.upper(i).iter().zip(b.upper(i)) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Largest amount by which `tight` is looser than `loose` anywhere.
pub fn max_looseness(tight: &LayerBounds, loose: &LayerBounds) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=tight.depth() {
        for (t, l) in tight.lower(i).iter().zip(loose.lower(i)) {
            worst = worst.max(l - t);
        }
        for (t, l) in tight.upper(i).iter().zip(loose.upper(i)) {
            worst = worst.max(t - l);
        }
    }
    worst
}

/// The two-layer toy network `x ↦ M relu(M x)` with `M = [[1, 1], [1, −1]]`.
pub const TOY_NET: &str = include_str!("../fixtures/toy.net");

pub fn toy() -> Network {
    Network::from_text(TOY_NET).unwrap()
}

/// `l_{L,target}` under `kind`.
pub fn lower_at(net: &Network, kind: RelaxationKind, input: &InputBox, target: usize) -> f64 {
    bounds_vars(&net.vars(None), kind, input).unwrap().output_lower()[target]
}

/// Tape gradient of `l_{L,target}` with respect to θ.
pub fn param_gradient(net: &Network, kind: RelaxationKind, input: &InputBox, target: usize) -> Vec<f64> {
    let tape = Tape::new();
    let vars = net.vars(Some(&tape));
    let b = bounds_vars(&vars, kind, input).unwrap();
    let l = b.lower.last().unwrap().index(target).unwrap();
    if !l.is_tracked() {
        return vec![0.0; net.num_params()];
    }
    let g = tape.gradient(&l).unwrap();
    vars.params()
        .into_iter()
        .flat_map(|p| g.wrt(p).map(|t| t.into_data()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect()
}

/// Central differences of `l_{L,target}` in θ with step `h`. Returns `None`
/// when a one-sided pair disagrees by more than `kink_tol`, meaning the
/// bound is not differentiable at this point.
pub fn smooth_central_differences(
    net: &Network,
    kind: RelaxationKind,
    input: &InputBox,
    target: usize,
    h: f64,
    kink_tol: f64,
) -> Option<Vec<f64>> {
    let theta = net.params();
    let f0 = lower_at(net, kind, input, target);
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        probe.set_params(&t).unwrap();
        let plus = lower_at(&probe, kind, input, target);
        t[i] = theta[i] - h;
        probe.set_params(&t).unwrap();
        let minus = lower_at(&probe, kind, input, target);
        let (right, left) = ((plus - f0) / h, (f0 - minus) / h);
        if (right - left).abs() > kink_tol * right.abs().max(left.abs()).max(1.0) {
            return None;
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Some(out)
}

/// Norm-wise relative error `‖a − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// MNIST directory: `CERTLAB_DATA` or the repository's `data/mnist`.
pub fn mnist_dir() -> Option<std::path::PathBuf> {
    let dir = std::env::var_os("CERTLAB_DATA")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}
