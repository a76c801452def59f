//! Interval and backsubstitution bound propagation.
//!
//! Every engine works on [`NetVars`], so the same code yields plain bounds
//! (untracked parameters) or bounds recorded on a tape for training.
//! Layer `i` of [`LayerBounds`] holds the bounds of `x_i`; index 0 is the
//! input box.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp;
use crate::network::{LayerVars, NetVars, Network};
use crate::tensor::Var;

/// Intervals narrower than this are treated as stable.
pub const DEGENERATE_WIDTH: f64 = 1e-12;

/// Convex relaxation used to bound a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelaxationKind {
    /// Interval arithmetic.
    Box,
    /// Symbolic intervals: backsubstitution with constant ReLU bounds.
    HBox,
    /// Zonotope: parallel lower and upper lines of slope `u/(u−l)`.
    DeepZ,
    /// Adaptive lower slope and the chord as upper bound.
    Crown,
    /// CROWN with the lower bound fixed to 0.
    Crown0,
    /// Box intermediate bounds with a CROWN output layer.
    CrownIbpR,
    /// Convex hull of the ReLU graph, solved as an LP.
    Triangle,
    /// Triangle lower bounds with upper bounds of slope 0 and 1, solved as an LP.
    Parallelogram,
}

impl RelaxationKind {
    /// Every relaxation, in a fixed order.
    pub const ALL: [RelaxationKind; 8] = [
        Self::Box,
        Self::HBox,
        Self::DeepZ,
        Self::Crown,
        Self::Crown0,
        Self::CrownIbpR,
        Self::Triangle,
        Self::Parallelogram,
    ];

    /// Lower-case name used in configs, CSV headers and reports.
    pub fn name(self) -> &'static str {
        match self {
            Self::Box => "box",
            Self::HBox => "hbox",
            Self::DeepZ => "deepz",
            Self::Crown => "crown",
            Self::Crown0 => "crown0",
            Self::CrownIbpR => "crown-ibp-r",
            Self::Triangle => "triangle",
            Self::Parallelogram => "parallelogram",
        }
    }

    /// Whether bounds come from [`backsub_bounds`].
    pub fn is_backsub(self) -> bool {
        matches!(self, Self::HBox | Self::DeepZ | Self::Crown | Self::Crown0)
    }

    /// Whether bounds come from the LP engine.
    pub fn is_lp(self) -> bool {
        matches!(self, Self::Triangle | Self::Parallelogram)
    }
}

impl fmt::Display for RelaxationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelaxationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' ', '(', ')'], "-");
        let norm = norm.trim_matches('-');
        Ok(match norm {
            "box" | "ibp" | "interval" => Self::Box,
            "hbox" | "symbolic-interval" => Self::HBox,
            "deepz" | "zonotope" => Self::DeepZ,
            "crown" | "deeppoly" => Self::Crown,
            "crown0" | "crown-0" => Self::Crown0,
            "crown-ibp-r" | "crownibpr" | "crown-ibp--r" | "crown-ibp" => Self::CrownIbpR,
            "triangle" => Self::Triangle,
            "parallelogram" => Self::Parallelogram,
            _ => return Err(Error::Invalid(format!("unknown relaxation {s:?}"))),
        })
    }
}

/// Input region `[l_0, u_0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    /// Lower corner.
    pub lower: Vec<f64>,
    /// Upper corner.
    pub upper: Vec<f64>,
}

impl InputBox {
    /// Box with the given corners; fails if they differ in length, are not finite or cross.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Invalid("box bounds differ in length".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::Invalid(format!("invalid box coordinate {i}: [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[x − ε, x + ε]`, intersected with `clip` when given.
    pub fn around(x: &[f64], eps: f64, clip: Option<(f64, f64)>) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Invalid(format!("ε must be a non-negative number, got {eps}")));
        }
        let (mut lower, mut upper): (Vec<f64>, Vec<f64>) =
            x.iter().map(|&v| (v - eps, v + eps)).unzip();
        if let Some((lo, hi)) = clip {
            for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
                *l = l.max(lo);
                *u = u.min(hi);
                if *l > *u {
                    // A point outside the clip domain collapses to its nearest face.
                    let p = if *u < lo { lo } else { hi };
                    *l = p;
                    *u = p;
                }
            }
        }
        Self::new(lower, upper)
    }

    /// Number of input coordinates.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Whether `x` lies in the box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| l <= v && v <= u)
    }
}

/// Per-layer bounds `l_i, u_i` for `i = 0..=L`.
#[derive(Clone, Debug)]
pub struct LayerBounds {
    /// `lower[i]` bounds layer `i` from below.
    pub lower: Vec<Var>,
    /// `upper[i]` bounds layer `i` from above.
    pub upper: Vec<Var>,
}

impl LayerBounds {
    fn start(input: &InputBox) -> Self {
        Self {
            lower: vec![Var::vector(input.lower.clone())],
            upper: vec![Var::vector(input.upper.clone())],
        }
    }

    fn push(&mut self, l: Var, u: Var) {
        self.lower.push(l);
        self.upper.push(u);
    }

    /// Number of layers after the input.
    pub fn depth(&self) -> usize {
        self.lower.len() - 1
    }

    /// Lower bounds of layer `layer` (0 is the input).
    pub fn lower(&self, layer: usize) -> &[f64] {
        self.lower[layer].data()
    }

    /// Upper bounds of layer `layer` (0 is the input).
    pub fn upper(&self, layer: usize) -> &[f64] {
        self.upper[layer].data()
    }

    /// Lower bounds of the network output.
    pub fn output_lower(&self) -> &[f64] {
        self.lower.last().unwrap().data()
    }

    /// Upper bounds of the network output.
    pub fn output_upper(&self) -> &[f64] {
        self.upper.last().unwrap().data()
    }

    /// Same values with the tape links removed.
    pub fn detach(&self) -> LayerBounds {
        LayerBounds {
            lower: self.lower.iter().map(Var::detach).collect(),
            upper: self.upper.iter().map(Var::detach).collect(),
        }
    }
}

/// Linear lower and upper bounds of one ReLU on `[l, u]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluRelax {
    /// Slope of the lower line.
    pub lower_slope: f64,
    /// Offset of the lower line.
    pub lower_offset: f64,
    /// Slope of the upper line.
    pub upper_slope: f64,
    /// Offset of the upper line.
    pub upper_offset: f64,
}

/// Stability class of a ReLU with pre-activation bounds `[l, u]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    /// `u ≤ 0`: output is constantly zero.
    Dead,
    /// `l ≥ 0` (or a degenerate interval above zero): output equals input.
    Live,
    /// `l < 0 < u`.
    Unstable,
}

/// Stability class of a ReLU whose input lies in `[l, u]`.
pub fn stability(l: f64, u: f64) -> Stability {
    if u <= 0.0 {
        Stability::Dead
    } else if l >= 0.0 || u - l < DEGENERATE_WIDTH {
        Stability::Live
    } else {
        Stability::Unstable
    }
}

/// Adaptive CROWN lower bound: slope 0 when `−l ≥ u`, else 1.
pub fn crown_lower_slope(l: f64, u: f64) -> f64 {
    if -l >= u {
        0.0
    } else {
        1.0
    }
}

/// Single-neuron relaxation for the backsubstitution kinds.
pub fn relu_relax(kind: RelaxationKind, l: f64, u: f64) -> Result<ReluRelax> {
    if l > u {
        return Err(Error::Invalid(format!("lower bound {l} exceeds upper bound {u}")));
    }
    let vars = relax_vars(kind, &Var::vector(vec![l]), &Var::vector(vec![u]))?;
    Ok(ReluRelax {
        lower_slope: vars.lower_slope.data()[0],
        lower_offset: vars.lower_offset.data()[0],
        upper_slope: vars.upper_slope.data()[0],
        upper_offset: vars.upper_offset.data()[0],
    })
}

/// Vectorised relaxation coefficients, differentiable in `l` and `u`.
#[derive(Clone, Debug)]
pub struct RelaxVars {
    /// Slopes of the lower lines.
    pub lower_slope: Var,
    /// Offsets of the lower lines.
    pub lower_offset: Var,
    /// Slopes of the upper lines.
    pub upper_slope: Var,
    /// Offsets of the upper lines.
    pub upper_offset: Var,
}

/// Chord slope `λ = u/(u − l)` on unstable neurons (zero elsewhere, where
/// the value is never used).
pub(crate) fn chord_slope(l: &Var, u: &Var, unstable: &[bool]) -> Result<Var> {
    let n = unstable.len();
    let width = u.sub(l)?;
    let safe = Var::select(unstable.to_vec(), &width, &Var::vector(vec![1.0; n]))?;
    let lam = u.div(&safe)?;
    Ok(Var::select(unstable.to_vec(), &lam, &Var::vector(vec![0.0; n]))?)
}

/// Linear lower and upper ReLU relaxations of `kind` for inputs in `[l, u]`, differentiable in `l` and `u`.
pub fn relax_vars(kind: RelaxationKind, l: &Var, u: &Var) -> Result<RelaxVars> {
    if kind == RelaxationKind::Box || kind.is_lp() {
        return Err(Error::WrongEngine(format!("{kind} relaxation")));
    }
    let (lv, uv) = (l.data(), u.data());
    let n = lv.len();
    let class: Vec<Stability> = lv.iter().zip(uv).map(|(&a, &b)| stability(a, b)).collect();
    let unstable: Vec<bool> = class.iter().map(|c| *c == Stability::Unstable).collect();
    let live: Vec<f64> = class
        .iter()
        .map(|c| if *c == Stability::Live { 1.0 } else { 0.0 })
        .collect();
    let zeros = Var::vector(vec![0.0; n]);
    let live_v = Var::vector(live.clone());
    let lam = chord_slope(l, u, &unstable)?;
    let chord_offset = Var::select(unstable.clone(), &lam.mul(l)?.neg(), &zeros)?;
    let chord = Var::select(unstable.clone(), &lam, &live_v)?;

    let (upper_slope, upper_offset) = match kind {
        RelaxationKind::HBox => (
            live_v.clone(),
            Var::select(unstable.clone(), u, &zeros)?,
        ),
        _ => (chord.clone(), chord_offset),
    };
    let lower_slope = match kind {
        RelaxationKind::DeepZ => chord,
        RelaxationKind::Crown | RelaxationKind::CrownIbpR => Var::vector(
            (0..n)
                .map(|j| match class[j] {
                    Stability::Unstable => crown_lower_slope(lv[j], uv[j]),
                    _ => live[j],
                })
                .collect(),
        ),
        RelaxationKind::Crown0 => zeros.clone(),
        RelaxationKind::HBox => live_v,
        _ => unreachable!(),
    };
    Ok(RelaxVars {
        lower_slope,
        lower_offset: zeros,
        upper_slope,
        upper_offset,
    })
}

fn linear_of(layer: &LayerVars) -> Option<(&Var, &Var)> {
    match layer {
        LayerVars::Linear { weight, bias } => Some((weight, bias)),
        LayerVars::Relu => None,
    }
}

/// Sign-split interval arithmetic for one linear layer.
fn interval_linear(w: &Var, b: &Var, l: &Var, u: &Var) -> Result<(Var, Var)> {
    let wp = w.pos_part();
    let wn = w.neg_part();
    let lo = wp.matvec(l)?.add(&wn.matvec(u)?)?.add(b)?;
    let hi = wp.matvec(u)?.add(&wn.matvec(l)?)?.add(b)?;
    Ok((lo, hi))
}

/// Interval bounds of every layer, differentiable in the network parameters.
pub fn box_propagate_vars(net: &NetVars, input: &InputBox) -> Result<LayerBounds> {
    let mut b = LayerBounds::start(input);
    for layer in &net.layers {
        let (l, u) = (b.lower.last().unwrap(), b.upper.last().unwrap());
        let (nl, nu) = match linear_of(layer) {
            Some((w, bias)) => interval_linear(w, bias, l, u)?,
            None => (l.relu(), u.relu()),
        };
        b.push(nl, nu);
    }
    Ok(b)
}

/// Interval bounds of every layer.
pub fn box_propagate(net: &Network, input: &InputBox) -> Result<LayerBounds> {
    check_box(net, input)?;
    box_propagate_vars(&net.vars(None), input)
}

fn check_box(net: &Network, input: &InputBox) -> Result<()> {
    if input.dim() != net.input_dim() {
        return Err(Error::Invalid(format!(
            "box has {} coordinates, network expects {}",
            input.dim(),
            net.input_dim()
        )));
    }
    Ok(())
}

/// Backsubstitutes the linear layer at position `i` (1-based) down to the
/// input and concretises against the input box.
fn backsub_linear(
    net: &NetVars,
    i: usize,
    relax: &[Option<RelaxVars>],
    input: (&Var, &Var),
) -> Result<(Var, Var)> {
    let (w, b) = linear_of(&net.layers[i - 1]).expect("backsub starts at a linear layer");
    let (mut up_c, mut up_q) = (w.clone(), b.clone());
    let (mut lo_c, mut lo_q) = (w.clone(), b.clone());
    for k in (1..i).rev() {
        match linear_of(&net.layers[k - 1]) {
            Some((wk, bk)) => {
                up_q = up_q.add(&up_c.matvec(bk)?)?;
                up_c = up_c.matmul(wk)?;
                lo_q = lo_q.add(&lo_c.matvec(bk)?)?;
                lo_c = lo_c.matmul(wk)?;
            }
            None => {
                let r = relax[k].as_ref().expect("relaxation built before use");
                // Zero coefficients take the upper relaxation in both
                // expressions; their contribution vanishes either way.
                let p = up_c.pos_part();
                let n = up_c.neg_part();
                up_q = up_q
                    .add(&p.matvec(&r.upper_offset)?)?
                    .add(&n.matvec(&r.lower_offset)?)?;
                up_c = p
                    .scale_cols(&r.upper_slope)?
                    .add(&n.scale_cols(&r.lower_slope)?)?;
                let p = lo_c.relu();
                let n = lo_c.sub(&p)?;
                lo_q = lo_q
                    .add(&p.matvec(&r.lower_offset)?)?
                    .add(&n.matvec(&r.upper_offset)?)?;
                lo_c = p
                    .scale_cols(&r.lower_slope)?
                    .add(&n.scale_cols(&r.upper_slope)?)?;
            }
        }
    }
    let (l0, u0) = input;
    let p = up_c.pos_part();
    let n = up_c.neg_part();
    let upper = p.matvec(u0)?.add(&n.matvec(l0)?)?.add(&up_q)?;
    let p = lo_c.pos_part();
    let n = lo_c.neg_part();
    let lower = p.matvec(l0)?.add(&n.matvec(u0)?)?.add(&lo_q)?;
    Ok((lower, upper))
}

/// Bounds for a ReLU layer from its relaxation. Because every slope is
/// non-negative, backsubstituting `λ·x_{i−1} + d` and concretising gives
/// exactly `λ·u_{i−1} + d` (resp. `λ·l_{i−1} + d`).
fn relu_layer_bounds(r: &RelaxVars, l: &Var, u: &Var) -> Result<(Var, Var)> {
    let lo = r.lower_slope.mul(l)?.add(&r.lower_offset)?;
    let hi = r.upper_slope.mul(u)?.add(&r.upper_offset)?;
    Ok((lo, hi))
}

/// Backsubstitution bounds of every layer under `kind`, differentiable in the network parameters.
pub fn backsub_bounds_vars(
    net: &NetVars,
    kind: RelaxationKind,
    input: &InputBox,
) -> Result<LayerBounds> {
    if !kind.is_backsub() {
        return Err(Error::WrongEngine(format!(
            "{kind} does not use backsubstitution"
        )));
    }
    let mut b = LayerBounds::start(input);
    let mut relax: Vec<Option<RelaxVars>> = vec![None; net.layers.len() + 1];
    let l0 = b.lower[0].clone();
    let u0 = b.upper[0].clone();
    for i in 1..=net.layers.len() {
        let (nl, nu) = match &net.layers[i - 1] {
            LayerVars::Linear { .. } => backsub_linear(net, i, &relax, (&l0, &u0))?,
            LayerVars::Relu => {
                let r = relax_vars(kind, &b.lower[i - 1], &b.upper[i - 1])?;
                let out = relu_layer_bounds(&r, &b.lower[i - 1], &b.upper[i - 1])?;
                relax[i] = Some(r);
                out
            }
        };
        b.push(nl, nu);
    }
    Ok(b)
}

/// Backsubstitution bounds of every layer under `kind`.
pub fn backsub_bounds(net: &Network, kind: RelaxationKind, input: &InputBox) -> Result<LayerBounds> {
    check_box(net, input)?;
    backsub_bounds_vars(&net.vars(None), kind, input)
}

/// Box bounds everywhere except the output, which gets one CROWN
/// backsubstitution over the Box intermediate bounds.
pub fn crown_ibp_r_bounds_vars(net: &NetVars, input: &InputBox) -> Result<LayerBounds> {
    let mut b = box_propagate_vars(net, input)?;
    let depth = net.layers.len();
    let mut relax: Vec<Option<RelaxVars>> = vec![None; depth + 1];
    for (k, layer) in net.layers.iter().enumerate() {
        if matches!(layer, LayerVars::Relu) {
            relax[k + 1] = Some(relax_vars(
                RelaxationKind::CrownIbpR,
                &b.lower[k],
                &b.upper[k],
            )?);
        }
    }
    let (l0, u0) = (b.lower[0].clone(), b.upper[0].clone());
    let (l, u) = backsub_linear(net, depth, &relax, (&l0, &u0))?;
    b.lower[depth] = l;
    b.upper[depth] = u;
    Ok(b)
}

/// CROWN-IBP(R) bounds: interval intermediate bounds and a CROWN backsubstitution for the output layer.
pub fn crown_ibp_r_bounds(net: &Network, input: &InputBox) -> Result<LayerBounds> {
    check_box(net, input)?;
    crown_ibp_r_bounds_vars(&net.vars(None), input)
}

/// Dispatches to the engine for `kind`.
pub fn bounds_vars(net: &NetVars, kind: RelaxationKind, input: &InputBox) -> Result<LayerBounds> {
    bounds_vars_with(net, kind, input, &lp::LpOptions::default())
}

/// As [`bounds_vars`], with explicit options for the LP kinds.
pub fn bounds_vars_with(
    net: &NetVars,
    kind: RelaxationKind,
    input: &InputBox,
    opts: &lp::LpOptions,
) -> Result<LayerBounds> {
    match kind {
        RelaxationKind::Box => box_propagate_vars(net, input),
        RelaxationKind::CrownIbpR => crown_ibp_r_bounds_vars(net, input),
        RelaxationKind::Triangle => lp::lp_bounds_vars(net, lp::LpKind::Triangle, input, opts),
        RelaxationKind::Parallelogram => lp::lp_bounds_vars(net, lp::LpKind::Parallelogram, input, opts),
        _ => backsub_bounds_vars(net, kind, input),
    }
}

/// Bounds of every layer for the box `[x − ε, x + ε]` (optionally clipped).
pub fn bounds(
    net: &Network,
    kind: RelaxationKind,
    x: &[f64],
    eps: f64,
    clip: Option<(f64, f64)>,
) -> Result<LayerBounds> {
    let input = InputBox::around(x, eps, clip)?;
    check_box(net, &input)?;
    bounds_vars(&net.vars(None), kind, &input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Linear;
    use crate::tensor::Tensor;

    fn toy() -> Network {
        let m = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        Network::from_linear(vec![
            Linear::new(m.clone(), Tensor::zeros(&[2])).unwrap(),
            Linear::new(m, Tensor::zeros(&[2])).unwrap(),
        ])
        .unwrap()
    }

    fn unit_box() -> InputBox {
        InputBox::new(vec![-1.0; 2], vec![1.0; 2]).unwrap()
    }

    #[test]
    fn deepz_relax_example() {
        let r = relu_relax(RelaxationKind::DeepZ, -2.0, 2.0).unwrap();
        assert_eq!(r.upper_slope, 0.5);
        assert_eq!(r.upper_offset, 1.0);
        assert_eq!(r.lower_slope, 0.5);
        assert_eq!(r.lower_offset, 0.0);
    }

    #[test]
    fn crown_lower_choice() {
        assert_eq!(relu_relax(RelaxationKind::Crown, -2.0, 2.0).unwrap().lower_slope, 0.0);
        assert_eq!(relu_relax(RelaxationKind::Crown, -1.0, 2.0).unwrap().lower_slope, 1.0);
        assert_eq!(relu_relax(RelaxationKind::Crown, -3.0, 2.0).unwrap().lower_slope, 0.0);
    }

    #[test]
    fn crown0_lower_is_zero_even_when_live() {
        let r = relu_relax(RelaxationKind::Crown0, 1.0, 2.0).unwrap();
        assert_eq!((r.lower_slope, r.lower_offset), (0.0, 0.0));
        assert_eq!((r.upper_slope, r.upper_offset), (1.0, 0.0));
    }

    #[test]
    fn hbox_relax() {
        let r = relu_relax(RelaxationKind::HBox, -1.0, 3.0).unwrap();
        assert_eq!(r, ReluRelax { lower_slope: 0.0, lower_offset: 0.0, upper_slope: 0.0, upper_offset: 3.0 });
    }

    #[test]
    fn stable_cases() {
        for kind in [RelaxationKind::HBox, RelaxationKind::DeepZ, RelaxationKind::Crown] {
            let dead = relu_relax(kind, -3.0, -1.0).unwrap();
            assert_eq!(dead, ReluRelax { lower_slope: 0.0, lower_offset: 0.0, upper_slope: 0.0, upper_offset: 0.0 });
            let live = relu_relax(kind, 0.0, 1.0).unwrap();
            assert_eq!(live, ReluRelax { lower_slope: 1.0, lower_offset: 0.0, upper_slope: 1.0, upper_offset: 0.0 });
            let zero = relu_relax(kind, -1.0, 0.0).unwrap();
            assert_eq!(zero.upper_slope, 0.0);
            let degenerate = relu_relax(kind, -1e-14, 1e-14).unwrap();
            assert_eq!(degenerate.upper_slope, 1.0);
        }
    }

    #[test]
    fn relax_rejects_inverted_interval() {
        assert!(relu_relax(RelaxationKind::DeepZ, 1.0, 0.0).is_err());
        assert!(matches!(
            relu_relax(RelaxationKind::Box, 0.0, 1.0),
            Err(Error::WrongEngine(_))
        ));
    }

    #[test]
    fn upper_relaxations_agree() {
        for (l, u) in [(-2.0, 1.0), (-0.5, 3.0), (0.5, 2.0), (-2.0, -1.0)] {
            let a = relu_relax(RelaxationKind::DeepZ, l, u).unwrap();
            let b = relu_relax(RelaxationKind::Crown, l, u).unwrap();
            let c = relu_relax(RelaxationKind::Crown0, l, u).unwrap();
            assert_eq!((a.upper_slope, a.upper_offset), (b.upper_slope, b.upper_offset));
            assert_eq!((a.upper_slope, a.upper_offset), (c.upper_slope, c.upper_offset));
        }
    }

    #[test]
    fn box_on_toy() {
        let b = box_propagate(&toy(), &unit_box()).unwrap();
        assert_eq!(b.lower(1), &[-2.0, -2.0]);
        assert_eq!(b.upper(1), &[2.0, 2.0]);
        assert_eq!(b.lower(2), &[0.0, 0.0]);
        assert_eq!(b.output_lower(), &[0.0, -2.0]);
        assert_eq!(b.output_upper(), &[4.0, 2.0]);
    }

    #[test]
    fn deepz_on_toy() {
        let b = backsub_bounds(&toy(), RelaxationKind::DeepZ, &unit_box()).unwrap();
        assert_eq!(b.lower(2), &[-1.0, -1.0]);
        // relu(x_1) reaches 2 at x = (1, 1), so 2 is the tightest sound value.
        assert_eq!(b.upper(2), &[2.0, 2.0]);
        assert_eq!(b.output_lower(), &[-1.0, -2.0]);
        assert_eq!(b.output_upper(), &[3.0, 2.0]);
    }

    #[test]
    fn crown_on_toy() {
        let b = backsub_bounds(&toy(), RelaxationKind::Crown, &unit_box()).unwrap();
        assert_eq!(b.output_lower(), &[0.0, -2.0]);
        assert_eq!(b.output_upper(), &[3.0, 2.0]);
    }

    #[test]
    fn crown_ibp_r_intermediates_are_box() {
        let net = toy();
        let c = crown_ibp_r_bounds(&net, &unit_box()).unwrap();
        let b = box_propagate(&net, &unit_box()).unwrap();
        for i in 0..3 {
            assert_eq!(c.lower(i), b.lower(i));
            assert_eq!(c.upper(i), b.upper(i));
        }
        assert_eq!(c.lower(1), &[-2.0, -2.0]);
    }

    #[test]
    fn zero_weight_net_gives_bias() {
        let net = Network::from_linear(vec![
            Linear::new(Tensor::zeros(&[3, 2]), Tensor::vector(vec![1.0, -1.0, 0.5])).unwrap(),
            Linear::new(Tensor::zeros(&[2, 3]), Tensor::vector(vec![0.25, -4.0])).unwrap(),
        ])
        .unwrap();
        for kind in [RelaxationKind::Box, RelaxationKind::DeepZ, RelaxationKind::Crown] {
            let b = bounds(&net, kind, &[0.3, 0.2], 0.5, None).unwrap();
            assert_eq!(b.output_lower(), &[0.25, -4.0]);
            assert_eq!(b.output_upper(), &[0.25, -4.0]);
        }
    }

    #[test]
    fn wrong_engine() {
        assert!(matches!(
            backsub_bounds(&toy(), RelaxationKind::Box, &unit_box()),
            Err(Error::WrongEngine(_))
        ));
        assert!(backsub_bounds(&toy(), RelaxationKind::Triangle, &unit_box()).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in RelaxationKind::ALL {
            assert_eq!(k.name().parse::<RelaxationKind>().unwrap(), k);
        }
        assert!("bogus".parse::<RelaxationKind>().is_err());
    }

    #[test]
    fn clip_intersects_box() {
        let b = InputBox::around(&[0.05, 0.95], 0.1, Some((0.0, 1.0))).unwrap();
        assert_eq!(b.lower, vec![0.0, 0.85]);
        assert!((b.upper[0] - 0.15).abs() < 1e-15);
        assert_eq!(b.upper[1], 1.0);
        assert!(InputBox::around(&[0.0], -1.0, None).is_err());
    }
}
