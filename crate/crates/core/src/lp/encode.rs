//! LP encodings of network relaxations and multilevel LP bounds.
//!
//! Each linear-layer neuron gets one LP per bound side, built over the
//! layers below it with the already computed bounds. The first linear layer
//! is solved in closed form (an LP over a box is interval arithmetic) and
//! ReLU layers too: their input coordinate ranges over exactly its own
//! bounds in the LP, so the optimum is the relaxation's extreme value on
//! that interval.
//!
//! Gradients use the envelope theorem: at the optimum the value equals the
//! Lagrangian, whose explicit dependence on the parameters is recorded on
//! the tape with the primal point and multipliers held fixed. Bounds of
//! earlier layers enter later encodings as tape values, so one backward
//! pass differentiates the whole multilevel chain.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LpError, LpProblem, LpSolution, Presolved, Sense};
use crate::bounds::{
    self, chord_slope, crown_lower_slope, stability, InputBox, LayerBounds, RelaxationKind,
    Stability,
};
use crate::error::{Error, Result};
use crate::network::{LayerVars, NetVars, Network};
use crate::tensor::Var;

/// Relaxation encoded as an LP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LpKind {
    /// Convex hull of each ReLU.
    Triangle,
    /// Triangle lower bounds with constant-slope upper bounds.
    Parallelogram,
    /// Interval rows per layer.
    BoxLp,
    /// Zonotope rows with an error variable per unstable ReLU.
    DeepZLp,
    /// CROWN's lines as rows.
    CrownLp,
}

impl LpKind {
    /// Every LP encoding, in a fixed order.
    pub const ALL: [LpKind; 5] = [
        Self::Triangle,
        Self::Parallelogram,
        Self::BoxLp,
        Self::DeepZLp,
        Self::CrownLp,
    ];

    /// Lower-case name used in reports.
    pub fn name(self) -> &'static str {
        match self {
            Self::Triangle => "triangle",
            Self::Parallelogram => "parallelogram",
            Self::BoxLp => "box-lp",
            Self::DeepZLp => "deepz-lp",
            Self::CrownLp => "crown-lp",
        }
    }
}

impl FromStr for LpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LpKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown LP relaxation {s:?}")))
    }
}

/// Which sides of the output layer to solve for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sides {
    /// Lower and upper bounds.
    #[default]
    Both,
    /// Only upper bounds; lower bounds fall back to Box.
    UpperOnly,
}

/// Shortcuts taken when computing LP bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LpOptions {
    /// Skip LPs for intermediate neurons that cheaper dominated bounds
    /// already prove stable. Their reported bounds are the cheaper ones;
    /// later encodings only depend on the stability class of such neurons.
    pub prefilter: bool,
    /// Which output bounds to solve for.
    pub output_sides: Sides,
    /// Stop solving output LPs once an upper bound is non-negative (the
    /// remaining uppers fall back to Box). Used for certification.
    pub stop_on_nonneg_upper: bool,
}

/// θ-dependent family of a ReLU relation `x ⋛ s·x' + d (+ t·e)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    Zero,
    Identity,
    Chord,
    ConstU,
    ShiftL,
    DeepZ,
    ReluU,
    ReluL,
}

/// Origin of a row; `sign` orients the residual as `sign·(x − s x' − d − t e)`.
#[derive(Clone, Copy, Debug)]
enum Tag {
    Linear { layer: usize, neuron: usize },
    BoxUpper { layer: usize, neuron: usize },
    BoxLower { layer: usize, neuron: usize },
    Relu { layer: usize, neuron: usize, family: Family, sign: f64 },
}

struct Encoded {
    problem: LpProblem,
    eq_tags: Vec<Tag>,
    le_tags: Vec<Tag>,
    /// Offset of layer `k`'s variables.
    offset: Vec<usize>,
    /// DeepZ noise variable of `(layer, neuron)`, if any.
    noise: Vec<Vec<Option<usize>>>,
}

fn values(net: &NetVars) -> Vec<Option<(Vec<f64>, usize, Vec<f64>)>> {
    net.layers
        .iter()
        .map(|l| match l {
            LayerVars::Linear { weight, bias } => {
                Some((weight.data().to_vec(), weight.shape()[1], bias.data().to_vec()))
            }
            LayerVars::Relu => None,
        })
        .collect()
}

/// Encodes layers `1..=target` for `kind`. `bounds` must hold layers
/// `0..target`.
fn encode(
    net: &NetVars,
    kind: LpKind,
    bounds: &LayerBounds,
    target: usize,
) -> std::result::Result<Encoded, LpError> {
    if bounds.lower.len() < target {
        return Err(LpError::MissingBounds(bounds.lower.len()));
    }
    let params = values(net);
    let mut widths = vec![bounds.lower[0].len()];
    for k in 1..=target {
        widths.push(match &params[k - 1] {
            Some((_, _, b)) => b.len(),
            None => widths[k - 1],
        });
    }
    let mut offset = vec![0];
    for k in 0..target {
        offset.push(offset[k] + widths[k]);
    }
    let base = offset[target] + widths[target];
    let mut lower = Vec::with_capacity(base);
    let mut upper = Vec::with_capacity(base);
    let mut implied = Vec::with_capacity(base);
    for k in 0..=target {
        if k < target {
            lower.extend_from_slice(bounds.lower(k));
            upper.extend_from_slice(bounds.upper(k));
        } else {
            lower.extend(std::iter::repeat(f64::NEG_INFINITY).take(widths[k]));
            upper.extend(std::iter::repeat(f64::INFINITY).take(widths[k]));
        }
        implied.extend(std::iter::repeat(k > 0).take(widths[k]));
    }
    let mut p = LpProblem::new(lower, upper, offset[target], Sense::Min);
    p.implied = implied;
    let mut eq_tags = Vec::new();
    let mut le_tags = Vec::new();
    let mut noise = vec![Vec::new(); target + 1];
    let var = |k: usize, j: usize| offset[k] + j;

    for k in 1..=target {
        let (lp, up) = (bounds.lower(k - 1), bounds.upper(k - 1));
        match &params[k - 1] {
            Some((w, cols, b)) => {
                for j in 0..widths[k] {
                    let row = &w[j * cols..(j + 1) * cols];
                    if kind == LpKind::BoxLp {
                        let (mut hi, mut lo) = (b[j], b[j]);
                        for (m, &c) in row.iter().enumerate() {
                            if c >= 0.0 {
                                hi += c * up[m];
                                lo += c * lp[m];
                            } else {
                                hi += c * lp[m];
                                lo += c * up[m];
                            }
                        }
                        p.add_le(vec![(var(k, j), 1.0)], hi);
                        le_tags.push(Tag::BoxUpper { layer: k, neuron: j });
                        p.add_le(vec![(var(k, j), -1.0)], -lo);
                        le_tags.push(Tag::BoxLower { layer: k, neuron: j });
                    } else {
                        let mut coeffs = vec![(var(k, j), 1.0)];
                        coeffs.extend(
                            row.iter()
                                .enumerate()
                                .filter(|(_, &c)| c != 0.0)
                                .map(|(m, &c)| (var(k - 1, m), -c)),
                        );
                        p.add_eq(coeffs, b[j], Some(var(k, j)));
                        eq_tags.push(Tag::Linear { layer: k, neuron: j });
                    }
                }
            }
            None => {
                noise[k] = vec![None; widths[k]];
                for j in 0..widths[k] {
                    let (l, u) = (lp[j], up[j]);
                    let (x, xp) = (var(k, j), var(k - 1, j));
                    let rel = |family, sign| Tag::Relu { layer: k, neuron: j, family, sign };
                    let class = stability(l, u);
                    match kind {
                        LpKind::BoxLp => {
                            p.add_le(vec![(x, 1.0)], u.max(0.0));
                            le_tags.push(rel(Family::ReluU, 1.0));
                            p.add_le(vec![(x, -1.0)], -l.max(0.0));
                            le_tags.push(rel(Family::ReluL, -1.0));
                        }
                        _ if class == Stability::Dead => {
                            p.add_eq(vec![(x, 1.0)], 0.0, Some(x));
                            eq_tags.push(rel(Family::Zero, 1.0));
                        }
                        _ if class == Stability::Live => {
                            p.add_eq(vec![(x, 1.0), (xp, -1.0)], 0.0, Some(x));
                            eq_tags.push(rel(Family::Identity, 1.0));
                        }
                        LpKind::DeepZLp => {
                            let lam = u / (u - l);
                            let mu = -0.5 * lam * l;
                            let e = p.lower.len();
                            p.lower.push(-1.0);
                            p.upper.push(1.0);
                            p.implied.push(false);
                            noise[k][j] = Some(e);
                            p.add_eq(vec![(x, 1.0), (xp, -lam), (e, -mu)], mu, Some(x));
                            eq_tags.push(rel(Family::DeepZ, 1.0));
                        }
                        _ => {
                            let lam = u / (u - l);
                            // Lower relations `x ≥ 0` and `x ≥ x'`.
                            let zero_lower = true;
                            let ident_lower =
                                kind != LpKind::CrownLp || crown_lower_slope(l, u) == 1.0;
                            let zero_lower = zero_lower
                                && (kind != LpKind::CrownLp || crown_lower_slope(l, u) == 0.0);
                            if zero_lower {
                                p.add_le(vec![(x, -1.0)], 0.0);
                                le_tags.push(rel(Family::Zero, -1.0));
                            }
                            if ident_lower {
                                p.add_le(vec![(xp, 1.0), (x, -1.0)], 0.0);
                                le_tags.push(rel(Family::Identity, -1.0));
                            }
                            if kind == LpKind::Parallelogram {
                                p.add_le(vec![(x, 1.0)], u);
                                le_tags.push(rel(Family::ConstU, 1.0));
                                p.add_le(vec![(x, 1.0), (xp, -1.0)], -l);
                                le_tags.push(rel(Family::ShiftL, 1.0));
                            } else {
                                p.add_le(vec![(x, 1.0), (xp, -lam)], -lam * l);
                                le_tags.push(rel(Family::Chord, 1.0));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Encoded {
        problem: p,
        eq_tags,
        le_tags,
        offset,
        noise,
    })
}

/// LP for neuron `neuron` of layer `layer`, given bounds for all layers
/// below it.
pub fn encode_network(
    net: &Network,
    kind: LpKind,
    bounds: &LayerBounds,
    layer: usize,
    neuron: usize,
    sense: Sense,
) -> Result<LpProblem> {
    if layer == 0 || layer > net.depth() {
        return Err(Error::Invalid(format!("layer {layer} out of range")));
    }
    let enc = encode(&net.vars(None), kind, bounds, layer)?;
    let mut p = enc.problem;
    p.objective = enc.offset[layer] + neuron;
    p.sense = sense;
    if p.objective >= enc.offset[layer] + bounds_width(net, layer) {
        return Err(Error::Invalid(format!("neuron {neuron} out of range")));
    }
    Ok(p)
}

fn bounds_width(net: &Network, layer: usize) -> usize {
    net.layer_widths()[layer]
}

/// Solves the LP of one neuron; intended for cross-checks.
pub fn solve_neuron(
    net: &Network,
    kind: LpKind,
    bounds: &LayerBounds,
    layer: usize,
    neuron: usize,
    sense: Sense,
) -> Result<LpSolution> {
    let p = encode_network(net, kind, bounds, layer, neuron, sense)?;
    Ok(super::simplex_solve(&p)?)
}

/// Tape-side pieces of one ReLU layer's relations.
struct FamilyVars {
    /// `(s, d, t)` per family; `None` when constant in θ.
    chord: Option<(Var, Var)>,
    deepz: Option<(Var, Var)>,
    const_u: Option<Var>,
    shift_l: Option<Var>,
    relu_u: Option<Var>,
    relu_l: Option<Var>,
}

fn family_vars(kind: LpKind, l: &Var, u: &Var) -> Result<FamilyVars> {
    let unstable: Vec<bool> = l
        .data()
        .iter()
        .zip(u.data())
        .map(|(&a, &b)| stability(a, b) == Stability::Unstable)
        .collect();
    let mut f = FamilyVars {
        chord: None,
        deepz: None,
        const_u: None,
        shift_l: None,
        relu_u: None,
        relu_l: None,
    };
    match kind {
        LpKind::Triangle | LpKind::CrownLp => {
            let lam = chord_slope(l, u, &unstable)?;
            let d = lam.mul(l)?.neg();
            f.chord = Some((lam, d));
        }
        LpKind::Parallelogram => {
            f.const_u = Some(u.clone());
            f.shift_l = Some(l.neg());
        }
        LpKind::DeepZLp => {
            let lam = chord_slope(l, u, &unstable)?;
            let mu = lam.mul(l)?.scale(-0.5);
            f.deepz = Some((lam, mu));
        }
        LpKind::BoxLp => {
            f.relu_u = Some(u.relu());
            f.relu_l = Some(l.relu());
        }
    }
    Ok(f)
}

/// Closed-form bounds of a ReLU layer under `kind`.
fn relu_layer(kind: LpKind, l: &Var, u: &Var) -> Result<(Var, Var)> {
    if kind == LpKind::BoxLp {
        return Ok((l.relu(), u.relu()));
    }
    let (lv, uv) = (l.data(), u.data());
    let n = lv.len();
    let class: Vec<Stability> = lv.iter().zip(uv).map(|(&a, &b)| stability(a, b)).collect();
    let zeros = Var::vector(vec![0.0; n]);
    let dead: Vec<bool> = class.iter().map(|c| *c == Stability::Dead).collect();
    let upper = Var::select(dead, &zeros, u)?;
    let unstable: Vec<bool> = class.iter().map(|c| *c == Stability::Unstable).collect();
    let keep_l: Vec<bool> = (0..n)
        .map(|j| match class[j] {
            Stability::Live => true,
            Stability::Dead => false,
            Stability::Unstable => kind == LpKind::CrownLp && crown_lower_slope(lv[j], uv[j]) == 1.0,
        })
        .collect();
    let mut lower = Var::select(keep_l, l, &zeros)?;
    if kind == LpKind::DeepZLp {
        let lam = chord_slope(l, u, &unstable)?;
        lower = Var::select(unstable, &lam.mul(l)?, &lower)?;
    }
    Ok((lower, upper))
}

/// Records the parameter dependence of an optimal value on the tape.
fn surrogate(
    enc: &Encoded,
    sol: &LpSolution,
    sense: Sense,
    net: &NetVars,
    bounds: &LayerBounds,
    families: &[Option<FamilyVars>],
    target: usize,
) -> Result<Var> {
    let x = &sol.x;
    let layer_x = |k: usize, w: usize| Var::vector(x[enc.offset[k]..enc.offset[k] + w].to_vec());
    let mut terms: Vec<Var> = Vec::new();
    let width = |k: usize| bounds.lower.get(k).map_or(0, |v| v.len());
    // Multipliers grouped by (layer, kind of θ-dependence).
    let mut lin: Vec<Vec<f64>> = vec![Vec::new(); target + 1];
    let mut box_up: Vec<Vec<f64>> = vec![Vec::new(); target + 1];
    let mut box_lo: Vec<Vec<f64>> = vec![Vec::new(); target + 1];
    let mut fam: Vec<[Vec<f64>; 6]> = vec![Default::default(); target + 1];
    let tagged = enc
        .eq_tags
        .iter()
        .zip(&sol.eq_duals)
        .chain(enc.le_tags.iter().zip(&sol.le_duals));
    for (tag, &m) in tagged {
        if m == 0.0 {
            continue;
        }
        let grow = |v: &mut Vec<f64>, n: usize| {
            if v.is_empty() {
                v.resize(n, 0.0);
            }
        };
        match *tag {
            Tag::Linear { layer, neuron } => {
                let n = net_width(net, layer);
                grow(&mut lin[layer], n);
                lin[layer][neuron] += m;
            }
            Tag::BoxUpper { layer, neuron } => {
                let n = net_width(net, layer);
                grow(&mut box_up[layer], n);
                box_up[layer][neuron] += m;
            }
            Tag::BoxLower { layer, neuron } => {
                let n = net_width(net, layer);
                grow(&mut box_lo[layer], n);
                box_lo[layer][neuron] += m;
            }
            Tag::Relu { layer, neuron, family, sign } => {
                let slot = match family {
                    Family::Zero | Family::Identity => continue,
                    Family::Chord => 0,
                    Family::DeepZ => 1,
                    Family::ConstU => 2,
                    Family::ShiftL => 3,
                    Family::ReluU => 4,
                    Family::ReluL => 5,
                };
                let n = width(layer - 1);
                grow(&mut fam[layer][slot], n);
                fam[layer][slot][neuron] += m * sign;
            }
        }
    }
    for k in 1..=target {
        if let LayerVars::Linear { weight, bias } = &net.layers[k - 1] {
            let xp = layer_x(k - 1, width(k - 1));
            if !lin[k].is_empty() {
                let affine = weight.matvec(&xp)?.add(bias)?;
                terms.push(affine.dot(&Var::vector(lin[k].clone()))?.neg());
            }
            if !box_up[k].is_empty() || !box_lo[k].is_empty() {
                let (l, u) = (&bounds.lower[k - 1], &bounds.upper[k - 1]);
                let wp = weight.pos_part();
                let wn = weight.neg_part();
                if !box_up[k].is_empty() {
                    let hi = wp.matvec(u)?.add(&wn.matvec(l)?)?.add(bias)?;
                    terms.push(hi.dot(&Var::vector(box_up[k].clone()))?.neg());
                }
                if !box_lo[k].is_empty() {
                    let lo = wp.matvec(l)?.add(&wn.matvec(u)?)?.add(bias)?;
                    terms.push(lo.dot(&Var::vector(box_lo[k].clone()))?);
                }
            }
        } else if let Some(f) = &families[k] {
            let n = width(k - 1);
            let xp = layer_x(k - 1, n);
            let e: Vec<f64> = enc.noise[k]
                .iter()
                .map(|v| v.map_or(0.0, |i| x[i]))
                .collect();
            // Residual `x − s x' − d − t e`; only `−(s x' + d + t e)` moves.
            let mut push = |mult: &Vec<f64>, s: Option<&Var>, d: Option<&Var>, t: Option<&Var>| -> Result<()> {
                if mult.is_empty() {
                    return Ok(());
                }
                let mv = Var::vector(mult.clone());
                let mut acc: Option<Var> = None;
                let mut add = |v: Var| -> Result<()> {
                    acc = Some(match acc.take() {
                        None => v,
                        Some(a) => a.add(&v)?,
                    });
                    Ok(())
                };
                if let Some(s) = s {
                    add(s.mul(&xp)?)?;
                }
                if let Some(d) = d {
                    add(d.clone())?;
                }
                if let Some(t) = t {
                    add(t.mul(&Var::vector(e.clone()))?)?;
                }
                if let Some(a) = acc {
                    terms.push(a.dot(&mv)?.neg());
                }
                Ok(())
            };
            if let Some((s, d)) = &f.chord {
                push(&fam[k][0], Some(s), Some(d), None)?;
            }
            if let Some((s, mu)) = &f.deepz {
                push(&fam[k][1], Some(s), Some(mu), Some(mu))?;
            }
            if let Some(d) = &f.const_u {
                push(&fam[k][2], None, Some(d), None)?;
            }
            if let Some(d) = &f.shift_l {
                push(&fam[k][3], None, Some(d), None)?;
            }
            if let Some(d) = &f.relu_u {
                push(&fam[k][4], None, Some(d), None)?;
            }
            if let Some(d) = &f.relu_l {
                push(&fam[k][5], None, Some(d), None)?;
            }
        }
    }
    // Variable boxes of earlier layers: ν_lo·(lo − x) + ν_hi·(x − hi).
    for k in 1..target {
        let r = enc.offset[k]..enc.offset[k] + width(k);
        let lo = &sol.lower_duals[r.clone()];
        let hi = &sol.upper_duals[r];
        if lo.iter().any(|&v| v != 0.0) {
            terms.push(bounds.lower[k].dot(&Var::vector(lo.to_vec()))?);
        }
        if hi.iter().any(|&v| v != 0.0) {
            terms.push(bounds.upper[k].dot(&Var::vector(hi.to_vec()))?.neg());
        }
    }
    let mut total = Var::scalar(0.0);
    for t in terms {
        total = total.add(&t)?;
    }
    let total = match sense {
        Sense::Min => total,
        Sense::Max => total.neg(),
    };
    Ok(total.with_value(sol.value))
}

fn net_width(net: &NetVars, layer: usize) -> usize {
    match &net.layers[layer - 1] {
        LayerVars::Linear { bias, .. } => bias.len(),
        LayerVars::Relu => unreachable!("linear rows come from linear layers"),
    }
}

fn is_tracked(net: &NetVars, bounds: &LayerBounds) -> bool {
    net.params().iter().any(|p| p.is_tracked())
        || bounds.lower.iter().chain(&bounds.upper).any(Var::is_tracked)
}

/// Multilevel LP bounds of every layer.
pub fn lp_bounds_vars(
    net: &NetVars,
    kind: LpKind,
    input: &InputBox,
    opts: &LpOptions,
) -> Result<LayerBounds> {
    let depth = net.layers.len();
    let need_box = opts.prefilter || opts.output_sides == Sides::UpperOnly || opts.stop_on_nonneg_upper;
    let boxb = if need_box {
        Some(bounds::box_propagate_vars(net, input)?)
    } else {
        None
    };
    let cheap = match (opts.prefilter, kind) {
        (true, LpKind::Triangle) => {
            let b = boxb.as_ref().unwrap();
            let z = bounds::backsub_bounds_vars(net, RelaxationKind::DeepZ, input)?;
            let mut lower = Vec::new();
            let mut upper = Vec::new();
            for i in 0..=depth {
                lower.push(b.lower[i].max(&z.lower[i])?);
                upper.push(b.upper[i].min(&z.upper[i])?);
            }
            Some(LayerBounds { lower, upper })
        }
        (true, LpKind::Parallelogram) => boxb.clone(),
        _ => None,
    };
    let mut b = LayerBounds {
        lower: vec![Var::vector(input.lower.clone())],
        upper: vec![Var::vector(input.upper.clone())],
    };
    let mut families: Vec<Option<FamilyVars>> = Vec::with_capacity(depth + 1);
    families.push(None);
    let tracked_net = net.params().iter().any(|p| p.is_tracked());
    for i in 1..=depth {
        let (l, u) = (b.lower[i - 1].clone(), b.upper[i - 1].clone());
        match &net.layers[i - 1] {
            LayerVars::Relu => {
                families.push(Some(family_vars(kind, &l, &u)?));
                let (nl, nu) = relu_layer(kind, &l, &u)?;
                b.lower.push(nl);
                b.upper.push(nu);
            }
            LayerVars::Linear { weight, bias } if i == 1 => {
                families.push(None);
                let wp = weight.pos_part();
                let wn = weight.neg_part();
                let lo = wp.matvec(&l)?.add(&wn.matvec(&u)?)?.add(bias)?;
                let hi = wp.matvec(&u)?.add(&wn.matvec(&l)?)?.add(bias)?;
                b.lower.push(lo);
                b.upper.push(hi);
            }
            LayerVars::Linear { bias, .. } => {
                families.push(None);
                let n = bias.len();
                let enc = encode(net, kind, &b, i)?;
                let pre = Presolved::new(&enc.problem)?;
                let tracked = tracked_net || is_tracked(net, &b);
                let last = i == depth;
                let mut lower: Vec<Var> = Vec::with_capacity(n);
                let mut upper: Vec<Var> = Vec::with_capacity(n);
                let mut stopped = false;
                for j in 0..n {
                    let obj = enc.offset[i] + j;
                    if !last {
                        if let Some(c) = &cheap {
                            let (cl, cu) = (c.lower[i].data()[j], c.upper[i].data()[j]);
                            if cl >= 0.0 || cu <= 0.0 {
                                lower.push(c.lower[i].index(j)?);
                                upper.push(c.upper[i].index(j)?);
                                continue;
                            }
                        }
                    }
                    let solve = |sense: Sense| -> Result<Var> {
                        let sol = pre.solve(&enc.problem, obj, sense)?;
                        if tracked {
                            surrogate(&enc, &sol, sense, net, &b, &families, i)
                        } else {
                            Ok(Var::scalar(sol.value))
                        }
                    };
                    let want_lower = !(last && opts.output_sides == Sides::UpperOnly);
                    let hi = if stopped {
                        boxb.as_ref().unwrap().upper[i].index(j)?
                    } else {
                        solve(Sense::Max)?
                    };
                    if last && opts.stop_on_nonneg_upper && hi.item() >= 0.0 {
                        stopped = true;
                    }
                    let lo = if want_lower {
                        solve(Sense::Min)?
                    } else {
                        boxb.as_ref().unwrap().lower[i].index(j)?
                    };
                    // Guard against round-off inverting a point interval.
                    let lo = if lo.item() > hi.item() { lo.with_value(hi.item()) } else { lo };
                    lower.push(lo);
                    upper.push(hi);
                }
                b.lower.push(Var::concat(&lower)?);
                b.upper.push(Var::concat(&upper)?);
            }
        }
    }
    Ok(b)
}

/// LP bounds of every layer under `kind`.
pub fn lp_bounds(net: &Network, kind: LpKind, input: &InputBox) -> Result<LayerBounds> {
    if input.dim() != net.input_dim() {
        return Err(Error::Invalid(format!(
            "box has {} coordinates, network expects {}",
            input.dim(),
            net.input_dim()
        )));
    }
    lp_bounds_vars(&net.vars(None), kind, input, &LpOptions::default())
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
    fn deepz_lp_matches_worked_example() {
        let b = lp_bounds(&toy(), LpKind::DeepZLp, &unit_box()).unwrap();
        for (got, want) in b.output_lower().iter().zip([-1.0, -2.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        for (got, want) in b.output_upper().iter().zip([3.0, 2.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn triangle_tighter_than_deepz_on_example() {
        let b = lp_bounds(&toy(), LpKind::Triangle, &unit_box()).unwrap();
        assert!(b.output_lower()[0] >= -1.0 - 1e-9);
        assert!(b.output_lower()[1] >= -2.0 - 1e-9);
        assert!(b.output_upper()[0] <= 3.0 + 1e-9);
        assert!(b.output_upper()[1] <= 2.0 + 1e-9);
    }

    #[test]
    fn triangle_rows_for_symmetric_interval() {
        let net = Network::from_linear(vec![
            Linear::new(Tensor::from_rows(&[vec![1.0]]).unwrap(), Tensor::zeros(&[1])).unwrap(),
            Linear::new(Tensor::from_rows(&[vec![1.0]]).unwrap(), Tensor::zeros(&[1])).unwrap(),
        ])
        .unwrap();
        let input = InputBox::new(vec![-1.0], vec![1.0]).unwrap();
        let b = bounds::box_propagate(&net, &input).unwrap();
        let enc = encode(&net.vars(None), LpKind::Triangle, &b, 2).unwrap();
        assert_eq!(enc.problem.le.len(), 3);
        let upper = &enc.problem.le[2];
        // x ≤ 0.5·x' + 0.5.
        assert_eq!(upper.coeffs, vec![(2, 1.0), (1, -0.5)]);
        assert_eq!(upper.rhs, 0.5);
        let enc = encode(&net.vars(None), LpKind::Parallelogram, &b, 2).unwrap();
        assert_eq!(enc.problem.le.len(), 4);
        assert_eq!(enc.problem.le[2].rhs, 1.0);
        assert_eq!(enc.problem.le[3].rhs, 1.0);
    }

    #[test]
    fn deepz_stable_positive_is_identity() {
        let net = Network::from_linear(vec![
            Linear::new(Tensor::from_rows(&[vec![1.0]]).unwrap(), Tensor::vector(vec![3.0])).unwrap(),
            Linear::new(Tensor::from_rows(&[vec![1.0]]).unwrap(), Tensor::zeros(&[1])).unwrap(),
        ])
        .unwrap();
        let input = InputBox::new(vec![-1.0], vec![1.0]).unwrap();
        let b = bounds::box_propagate(&net, &input).unwrap();
        let enc = encode(&net.vars(None), LpKind::DeepZLp, &b, 2).unwrap();
        let row = &enc.problem.eq[1].row;
        assert_eq!(row.coeffs, vec![(2, 1.0), (1, -1.0)]);
        assert_eq!(row.rhs, 0.0);
    }

    #[test]
    fn point_box_collapses() {
        let net = Network::build(&[3, 5, 4, 2], 3).unwrap();
        let x = [0.2, -0.4, 0.9];
        let z = net.forward(&x).unwrap();
        for kind in LpKind::ALL {
            let b = lp_bounds(&net, kind, &InputBox::around(&x, 0.0, None).unwrap()).unwrap();
            for j in 0..2 {
                assert!((b.output_lower()[j] - z[j]).abs() < 1e-9, "{kind:?}");
                assert!((b.output_upper()[j] - z[j]).abs() < 1e-9, "{kind:?}");
            }
        }
    }
}
