//! Landscape instrumentation: parameter sweeps of output bounds, jump
//! detection, refinement-based continuity checks, sensitivity formulas, the
//! minimal discontinuity network and 1-D gradient ascent runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{self, InputBox, LayerBounds, RelaxationKind};
use crate::error::{Error, Result};
use crate::lp::{lp_bounds, LpKind};
use crate::network::{Layer, Linear, Network};
use crate::tensor::{Tape, Tensor};

/// `points` values evenly spaced on `[lo, hi]`, hitting both ends exactly.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let n = (points - 1) as f64;
    (0..points)
        .map(|i| {
            let t = i as f64 / n;
            lo * (1.0 - t) + hi * t
        })
        .collect()
}

/// Symmetric grid on `[−δ_max, δ_max]`; contains 0 exactly for odd counts.
pub fn symmetric_grid(delta_max: f64, points: usize) -> Vec<f64> {
    let n = (points.max(2) - 1) as f64;
    (0..points)
        .map(|i| delta_max * (2.0 * i as f64 - n) / n)
        .collect()
}

/// Lower bound `l_{L,target}` of `net` under `kind`.
pub fn output_lower(net: &Network, kind: RelaxationKind, input: &InputBox, target: usize) -> Result<f64> {
    let b = bounds::bounds_vars(&net.vars(None), kind, input)?;
    output_index(&b, target)
}

fn output_index(b: &LayerBounds, target: usize) -> Result<f64> {
    b.output_lower()
        .get(target)
        .copied()
        .ok_or_else(|| Error::Invalid(format!("output neuron {target} out of range")))
}

/// Gradient of `l_{L,target}` with respect to the first-layer weights,
/// flattened row-major.
pub fn first_layer_gradient(
    net: &Network,
    kind: RelaxationKind,
    input: &InputBox,
    target: usize,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars = net.vars(Some(&tape));
    let b = bounds::bounds_vars(&vars, kind, input)?;
    let value = output_index(&b, target)?;
    let l = b.lower.last().unwrap().index(target)?;
    if !l.is_tracked() {
        return Ok((value, vec![0.0; net.first_linear().weight.len()]));
    }
    let g = tape.gradient(&l)?;
    Ok((value, g.wrt(vars.first_weight()).expect("leaf on tape").into_data()))
}

/// Copy of `net` with `delta · direction` added to the first-layer weights.
pub fn shift_first_layer(net: &Network, direction: &[f64], delta: f64) -> Result<Network> {
    let mut shifted = net.clone();
    let w = &mut shifted.first_linear_mut().weight;
    if w.len() != direction.len() {
        return Err(Error::Invalid(format!(
            "direction has {} entries, first layer has {} weights",
            direction.len(),
            w.len()
        )));
    }
    for (v, d) in w.data_mut().iter_mut().zip(direction) {
        *v += delta * d;
    }
    Ok(shifted)
}

/// Copy of `net` with `delta · direction` added to all parameters.
pub fn shift_params(net: &Network, direction: &[f64], delta: f64) -> Result<Network> {
    let mut theta = net.params();
    if theta.len() != direction.len() {
        return Err(Error::Invalid("direction length differs from parameter count".into()));
    }
    for (t, d) in theta.iter_mut().zip(direction) {
        *t += delta * d;
    }
    let mut out = net.clone();
    out.set_params(&theta)?;
    Ok(out)
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Invalid("sweep direction has zero or non-finite norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Output-bound values along one sweep direction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    /// Grid of weight shifts.
    pub deltas: Vec<f64>,
    /// Relaxations evaluated.
    pub kinds: Vec<RelaxationKind>,
    /// `values[k][i]` is the bound of `kinds[k]` at `deltas[i]`.
    pub values: Vec<Vec<f64>>,
    /// Unit-norm shift of the first-layer weights.
    pub direction: Vec<f64>,
    /// Output neuron whose lower bound is swept.
    pub target: usize,
}

impl SweepResult {
    /// `delta,<kind>…` header plus one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta");
        for k in &self.kinds {
            s.push(',');
            s.push_str(k.name());
        }
        s.push('\n');
        for (i, d) in self.deltas.iter().enumerate() {
            s.push_str(&d.to_string());
            for v in &self.values {
                s.push(',');
                s.push_str(&v[i].to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// Sweeps the first-layer weights along the unit gradient of
/// `l_{L,target}` under `direction_kind`, evaluated at δ = 0, and records
/// the lower bound of every kind in `kinds` on a symmetric grid.
#[allow(clippy::too_many_arguments)]
pub fn delta_sweep(
    net: &Network,
    kinds: &[RelaxationKind],
    direction_kind: RelaxationKind,
    input: &InputBox,
    target: usize,
    delta_max: f64,
    points: usize,
) -> Result<SweepResult> {
    if points < 3 {
        return Err(Error::Invalid("a sweep needs at least 3 grid points".into()));
    }
    let (_, mut direction) = first_layer_gradient(net, direction_kind, input, target)?;
    normalize(&mut direction)?;
    let deltas = symmetric_grid(delta_max, points);
    let mut values = vec![Vec::with_capacity(points); kinds.len()];
    for &d in &deltas {
        let shifted = shift_first_layer(net, &direction, d)?;
        for (k, &kind) in kinds.iter().enumerate() {
            values[k].push(output_lower(&shifted, kind, input, target)?);
        }
    }
    Ok(SweepResult {
        deltas,
        kinds: kinds.to_vec(),
        values,
        direction,
        target,
    })
}

/// A discontinuity located between `lo` and `hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Jump {
    /// Last grid point before the jump.
    pub lo: f64,
    /// First grid point after the jump.
    pub hi: f64,
    /// Signed change `f(hi) − f(lo)` across the final interval.
    pub magnitude: f64,
}

/// Width below which a persistent jump counts as localized.
pub const LOCALIZE_WIDTH: f64 = 1e-10;

fn max_adjacent(xs: &[f64], f: &impl Fn(f64) -> Result<f64>) -> Result<(usize, f64, Vec<f64>)> {
    let ys = xs.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let (mut best, mut mag) = (0, 0.0);
    for i in 0..ys.len() - 1 {
        let d = (ys[i + 1] - ys[i]).abs();
        if d > mag {
            mag = d;
            best = i;
        }
    }
    Ok((best, mag, ys))
}

/// Adjacent differences above `tau` that persist under one 4× local
/// refinement, keeping at least the fraction `persistence` of their size. Persistent jumps are then
/// localized by repeated 4× refinement down to [`LOCALIZE_WIDTH`].
pub fn detect_jumps(
    grid: &[f64],
    values: &[f64],
    tau: f64,
    persistence: f64,
    f: impl Fn(f64) -> Result<f64>,
) -> Result<Vec<Jump>> {
    if tau <= 0.0 {
        return Err(Error::Invalid("jump threshold must be positive".into()));
    }
    let mut out = Vec::new();
    for i in 0..grid.len().saturating_sub(1) {
        let d = (values[i + 1] - values[i]).abs();
        if d <= tau {
            continue;
        }
        let (mut lo, mut hi) = (grid[i], grid[i + 1]);
        let (k, mag, ys) = max_adjacent(&linspace(lo, hi, 5), &f)?;
        if mag < persistence * d {
            continue;
        }
        let step = (hi - lo) / 4.0;
        let mut signed = ys[k + 1] - ys[k];
        let base = lo;
        lo = base + step * k as f64;
        hi = if k == 3 { grid[i + 1] } else { base + step * (k + 1) as f64 };
        for _ in 0..60 {
            if hi - lo <= LOCALIZE_WIDTH {
                break;
            }
            let xs = linspace(lo, hi, 5);
            let (k, _, ys) = max_adjacent(&xs, &f)?;
            signed = ys[k + 1] - ys[k];
            lo = xs[k];
            hi = xs[k + 1];
        }
        out.push(Jump {
            lo,
            hi,
            magnitude: signed,
        });
    }
    Ok(out)
}

/// Outcome of the step-halving continuity test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityReport {
    /// Max adjacent difference per grid level.
    pub max_jumps: Vec<f64>,
    /// `max_jumps[k+1] / max_jumps[k]`.
    pub ratios: Vec<f64>,
    /// Whether every refinement passed.
    pub continuous: bool,
}

/// Admissible range of the max-jump ratio between successive grid refinements.
pub const CONTINUITY_RATIO: (f64, f64) = (0.3, 0.7);
/// Jumps below this are treated as zero by [`refinement_continuity`].
pub const NEGLIGIBLE_JUMP: f64 = 1e-9;

/// Evaluates `f` on `[lo, hi]` with `points` grid points, then halves the
/// step `refinements` times. Passes when each max adjacent difference is
/// below [`NEGLIGIBLE_JUMP`] or its ratio to the previous level lies in
/// [`CONTINUITY_RATIO`].
pub fn refinement_continuity(
    lo: f64,
    hi: f64,
    points: usize,
    refinements: usize,
    f: impl Fn(f64) -> Result<f64>,
) -> Result<ContinuityReport> {
    let mut n = points.max(2);
    let mut ys = linspace(lo, hi, n).into_iter().map(&f).collect::<Result<Vec<_>>>()?;
    let max_jump = |ys: &[f64]| ys.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let mut max_jumps = vec![max_jump(&ys)];
    for _ in 0..refinements {
        let m = 2 * n - 1;
        let xs = linspace(lo, hi, m);
        let mut next = Vec::with_capacity(m);
        for (j, &x) in xs.iter().enumerate() {
            next.push(if j % 2 == 0 { ys[j / 2] } else { f(x)? });
        }
        ys = next;
        n = m;
        max_jumps.push(max_jump(&ys));
    }
    let ratios: Vec<f64> = max_jumps.windows(2).map(|w| w[1] / w[0]).collect();
    let continuous = max_jumps[1..]
        .iter()
        .zip(&ratios)
        .all(|(&j, &r)| j < NEGLIGIBLE_JUMP || (CONTINUITY_RATIO.0..=CONTINUITY_RATIO.1).contains(&r));
    Ok(ContinuityReport {
        max_jumps,
        ratios,
        continuous,
    })
}

/// Closed-form final-layer sensitivity for networks of depth `l` (linear
/// plus ReLU layers) and width `m`, with `B = ⌈L/2⌉ − 1`.
pub fn theoretical_sensitivity(kind: RelaxationKind, l: u32, m: u32) -> Result<f64> {
    if l < 2 || m < 2 {
        return Err(Error::Invalid(format!("sensitivity needs L ≥ 2 and M ≥ 2, got L={l}, M={m}")));
    }
    let b = l.div_ceil(2) as i32 - 1;
    let m = f64::from(m);
    match kind {
        RelaxationKind::Box | RelaxationKind::HBox => Ok(1.0),
        RelaxationKind::DeepZ | RelaxationKind::Crown => Ok(2.0 * 3f64.powi(b) * m.powi(b + 1)),
        RelaxationKind::CrownIbpR => Ok((2.0 * m.powi(b + 2) - m.powi(b + 1) - m) / (m - 1.0)),
        other => Err(Error::Invalid(format!("no closed-form sensitivity is derived for {other}"))),
    }
}

/// Second differences `f(x−h) − 2f(x) + f(x+h)` of a uniform sample.
pub fn second_differences(values: &[f64]) -> Vec<f64> {
    values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect()
}

/// Number of interior grid points whose second difference exceeds `tol`;
/// a proxy for breakpoints of a piecewise-linear sweep.
pub fn kink_count(values: &[f64], tol: f64) -> usize {
    second_differences(values).iter().filter(|d| d.abs() > tol).count()
}

/// Least-squares residual norms of polynomial fits of degree `0..=max_deg`.
/// A proxy for local nonlinearity; not the formal degree.
pub fn poly_fit_residuals(xs: &[f64], ys: &[f64], max_deg: usize) -> Result<Vec<f64>> {
    use nalgebra::{DMatrix, DVector};
    if xs.len() != ys.len() || xs.len() <= max_deg {
        return Err(Error::Invalid("need more samples than the fit degree".into()));
    }
    let y = DVector::from_column_slice(ys);
    (0..=max_deg)
        .map(|deg| {
            let a = DMatrix::from_fn(xs.len(), deg + 1, |i, j| xs[i].powi(j as i32));
            let coef = a
                .clone()
                .svd(true, true)
                .solve(&y, 1e-12)
                .map_err(|e| Error::Invalid(e.to_string()))?;
            Ok((a * coef - &y).norm())
        })
        .collect()
}

/// The 3-layer discontinuity example with parameter `w`: `x_1 = (x_0 + w,
/// x_0 + w)`, ReLU, `x_3 = (x_{2,2} + 1, x_{2,2} − x_{2,1})`.
pub fn minimal_network(w: f64) -> Network {
    let l1 = Linear::new(
        Tensor::from_rows(&[vec![1.0], vec![1.0]]).expect("static shape"),
        Tensor::vector(vec![w, w]),
    )
    .expect("static shape");
    let l3 = Linear::new(
        Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 1.0]]).expect("static shape"),
        Tensor::vector(vec![1.0, 0.0]),
    )
    .expect("static shape");
    Network::new(vec![Layer::Linear(l1), Layer::Relu, Layer::Linear(l3)]).expect("valid layout")
}

/// Input box `x_0 ∈ [−1, 1]` of the minimal example.
pub fn minimal_input() -> InputBox {
    InputBox::new(vec![-1.0], vec![1.0]).expect("static box")
}

/// CROWN `l_{3,1}` of the minimal example.
pub fn minimal_crown_l31(w: f64) -> Result<f64> {
    output_lower(&minimal_network(w), RelaxationKind::Crown, &minimal_input(), 0)
}

/// hBox `l_{3,2}` of the minimal example.
pub fn minimal_hbox_l32(w: f64) -> Result<f64> {
    output_lower(&minimal_network(w), RelaxationKind::HBox, &minimal_input(), 1)
}

/// Expected CROWN `l_{3,1}`: 1 for `w ≤ 0`, `w` above.
pub fn expected_crown_l31(w: f64) -> f64 {
    if w <= 0.0 {
        1.0
    } else {
        w
    }
}

/// Expected hBox `l_{3,2}`: `−1−w` on `(−1, 1)`, 0 for `w ≥ 1`.
pub fn expected_hbox_l32(w: f64) -> f64 {
    if w >= 1.0 {
        0.0
    } else {
        -1.0 - w
    }
}

/// Verdict on one minimal-example curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveCheck {
    /// Relaxation name.
    pub relaxation: String,
    /// Bound examined, e.g. `l_3_1`.
    pub bound: String,
    /// Largest deviation from the closed form on the grid.
    pub max_deviation: f64,
    /// Jumps found on the grid.
    pub jumps: Vec<Jump>,
    /// Weight where the jump should sit.
    pub expected_jump_at: f64,
    /// Expected signed jump size.
    pub expected_magnitude: f64,
    /// Whether values and jumps match.
    pub pass: bool,
}

/// Values and verdicts of the two minimal examples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimalReport {
    /// Weights evaluated.
    pub grid: Vec<f64>,
    /// CROWN `l_{3,1}` on the grid.
    pub crown_l31: Vec<f64>,
    /// hBox `l_{3,2}` on the grid.
    pub hbox_l32: Vec<f64>,
    /// One check per curve.
    pub checks: Vec<CurveCheck>,
    /// Whether both checks pass.
    pub pass: bool,
}

/// Value tolerance for the minimal-example closed forms.
pub const MINIMAL_VALUE_TOL: f64 = 1e-9;
/// Tolerance on detected jump magnitudes.
pub const MINIMAL_JUMP_TOL: f64 = 1e-6;

/// Evaluates the minimal example on `w ∈ [−1, 1.5]` (step 0.01) and checks
/// the closed forms and the single jump of each bound.
pub fn minimal_examples() -> Result<MinimalReport> {
    let grid = linspace(-1.0, 1.5, 251);
    let crown = grid.iter().map(|&w| minimal_crown_l31(w)).collect::<Result<Vec<_>>>()?;
    let hbox = grid.iter().map(|&w| minimal_hbox_l32(w)).collect::<Result<Vec<_>>>()?;
    let check = |name: &str,
                 bound: &str,
                 vals: &[f64],
                 expected: fn(f64) -> f64,
                 skip: fn(f64) -> bool,
                 f: fn(f64) -> Result<f64>,
                 at: f64,
                 magnitude: f64|
     -> Result<CurveCheck> {
        let max_deviation = grid
            .iter()
            .zip(vals)
            .filter(|(w, _)| !skip(**w))
            .map(|(&w, &v)| (v - expected(w)).abs())
            .fold(0.0, f64::max);
        let jumps = detect_jumps(&grid, vals, 0.1, 0.5, f)?;
        let pass = max_deviation <= MINIMAL_VALUE_TOL
            && jumps.len() == 1
            && jumps[0].lo <= at + 1e-9
            && jumps[0].hi >= at - 1e-9
            && (jumps[0].magnitude.abs() - magnitude).abs() <= MINIMAL_JUMP_TOL;
        Ok(CurveCheck {
            relaxation: name.into(),
            bound: bound.into(),
            max_deviation,
            jumps,
            expected_jump_at: at,
            expected_magnitude: magnitude,
            pass,
        })
    };
    let checks = vec![
        check("crown", "l_3_1", &crown, expected_crown_l31, |_| false, minimal_crown_l31, 0.0, 1.0)?,
        // At w = −1 both ReLUs are dead, which the closed form excludes.
        check("hbox", "l_3_2", &hbox, expected_hbox_l32, |w| w <= -1.0, minimal_hbox_l32, 1.0, 2.0)?,
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(MinimalReport {
        grid,
        crown_l31: crown,
        hbox_l32: hbox,
        checks,
        pass,
    })
}

/// Random landscape instance: 1-D input, two hidden layers of 10, two
/// outputs; integer weights, biases and input in `[−4, 4]`, ε in
/// `[0.1, 4.1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeInstance {
    /// Network with one input and two outputs.
    pub net: Network,
    /// Input centre.
    pub x: f64,
    /// Input radius.
    pub eps: f64,
}

impl LandscapeInstance {
    /// Draws an instance from a seeded stream.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [1usize, 10, 10, 2];
        let mut linear = Vec::new();
        for w in dims.windows(2) {
            let weight: Vec<f64> = (0..w[0] * w[1]).map(|_| f64::from(rng.gen_range(-4i32..=4))).collect();
            let bias: Vec<f64> = (0..w[1]).map(|_| f64::from(rng.gen_range(-4i32..=4))).collect();
            linear.push(
                Linear::new(
                    Tensor::matrix(w[1], w[0], weight).expect("sized"),
                    Tensor::vector(bias),
                )
                .expect("sized"),
            );
        }
        let x = f64::from(rng.gen_range(-4i32..=4));
        let eps = rng.gen_range(0.1..=4.1);
        Self {
            net: Network::from_linear(linear).expect("valid dims"),
            x,
            eps,
        }
    }

    /// The input interval `[x − ε, x + ε]`.
    pub fn input(&self) -> InputBox {
        InputBox::around(&[self.x], self.eps, None).expect("finite box")
    }
}

/// Trajectory of one [`landscape_gd`] run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LandscapeRun {
    /// Unit-norm first-layer direction of the line search.
    pub direction: Vec<f64>,
    /// `(δ, l_{L,target}(δ))` before each step and after the last.
    pub trajectory: Vec<(f64, f64)>,
}

impl LandscapeRun {
    /// Largest single-step decrease of the objective (0 if none).
    pub fn max_drop(&self) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| w[0].1 - w[1].1)
            .fold(0.0, f64::max)
    }
}

/// Gradient ascent on `l_{L,target}` restricted to the line through the
/// first-layer weights along their unit gradient at δ = 0. The step size
/// starts at `lr` and is multiplied by `lr_decay` after each epoch.
pub fn landscape_gd(
    inst: &LandscapeInstance,
    kind: RelaxationKind,
    lr: f64,
    lr_decay: f64,
    epochs: usize,
    target: usize,
) -> Result<LandscapeRun> {
    let input = inst.input();
    let (_, mut direction) = first_layer_gradient(&inst.net, kind, &input, target)?;
    normalize(&mut direction)?;
    let mut delta = 0.0;
    let mut rate = lr;
    let mut trajectory = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let net = shift_first_layer(&inst.net, &direction, delta)?;
        let (value, g) = first_layer_gradient(&net, kind, &input, target)?;
        trajectory.push((delta, value));
        let slope: f64 = g.iter().zip(&direction).map(|(a, b)| a * b).sum();
        delta += rate * slope;
        rate *= lr_decay;
    }
    let net = shift_first_layer(&inst.net, &direction, delta)?;
    trajectory.push((delta, output_lower(&net, kind, &input, target)?));
    Ok(LandscapeRun {
        direction,
        trajectory,
    })
}

/// Random small network with 1..=`max_hidden` hidden layers of width
/// 1..=`max_width`, 1..=4 inputs and 1..=3 outputs, plus an unclipped box of
/// radius in `(0, max_eps]` around a point of `[0, 1]^n`. Zero biases from
/// initialization are replaced by draws from `±0.3`.
pub fn random_case(seed: u64, max_hidden: usize, max_width: usize, max_eps: f64) -> Result<(Network, InputBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![rng.gen_range(1..=4usize)];
    for _ in 0..rng.gen_range(1..=max_hidden.max(1)) {
        dims.push(rng.gen_range(1..=max_width.max(1)));
    }
    dims.push(rng.gen_range(1..=3usize));
    let mut net = Network::build(&dims, rng.gen())?;
    let theta: Vec<f64> = net
        .params()
        .into_iter()
        .map(|t| if t == 0.0 { rng.gen_range(-0.3..0.3) } else { t })
        .collect();
    net.set_params(&theta)?;
    let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(0.0..1.0)).collect();
    let input = InputBox::around(&x, rng.gen_range(1e-3..=max_eps), None)?;
    Ok((net, input))
}

/// Largest `|a − b|` over every bound of every layer.
pub fn max_bound_gap(a: &LayerBounds, b: &LayerBounds) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=a.depth() {
        let pairs = a.lower(i).iter().zip(b.lower(i)).chain(a.upper(i).iter().zip(b.upper(i)));
        for (x, y) in pairs {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Largest amount by which `tight` is looser than `loose` at any neuron.
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

/// Tolerance of the LP consistency checks.
pub const LP_CHECK_TOL: f64 = 1e-8;

/// Worst deviations found by [`lp_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpCheckReport {
    /// Number of random cases.
    pub cases: usize,
    /// Largest gap between BoxLP and interval propagation.
    pub box_lp_gap: f64,
    /// Largest gap between DeepZLP and DeepZ backsubstitution.
    pub deepz_lp_gap: f64,
    /// Largest amount by which Triangle is looser than DeepZLP, CrownLP or
    /// Parallelogram.
    pub triangle_slack: f64,
    /// Whether all deviations are within [`LP_CHECK_TOL`].
    pub pass: bool,
}

/// Checks BoxLP and DeepZLP against their closed forms and Triangle
/// dominance over the other encodings on `cases` cases from [`random_case`]
/// (at most 3 hidden layers of width 6, radius at most 0.5).
pub fn lp_check(cases: usize, seed: u64) -> Result<LpCheckReport> {
    let seeds: Vec<u64> = (0..cases as u64).map(|c| seed.wrapping_add(c)).collect();
    let per_case = crate::parallel::par_map(&seeds, |&s| -> Result<[f64; 3]> {
        let (net, input) = random_case(s, 3, 6, 0.5)?;
        let box_gap = max_bound_gap(&lp_bounds(&net, LpKind::BoxLp, &input)?, &bounds::box_propagate(&net, &input)?);
        let deepz_gap = max_bound_gap(
            &lp_bounds(&net, LpKind::DeepZLp, &input)?,
            &bounds::backsub_bounds(&net, RelaxationKind::DeepZ, &input)?,
        );
        let tri = lp_bounds(&net, LpKind::Triangle, &input)?;
        let mut slack: f64 = 0.0;
        for kind in [LpKind::DeepZLp, LpKind::CrownLp, LpKind::Parallelogram] {
            slack = slack.max(max_looseness(&tri, &lp_bounds(&net, kind, &input)?));
        }
        Ok([box_gap, deepz_gap, slack])
    });
    let mut worst = [0.0f64; 3];
    for r in per_case {
        for (w, v) in worst.iter_mut().zip(r?) {
            *w = w.max(v);
        }
    }
    Ok(LpCheckReport {
        cases,
        box_lp_gap: worst[0],
        deepz_lp_gap: worst[1],
        triangle_slack: worst[2],
        pass: worst.iter().all(|&w| w <= LP_CHECK_TOL),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = symmetric_grid(1.0, 5);
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn sensitivity_values() {
        for (l, m) in [(2, 2), (4, 2), (6, 10)] {
            assert_eq!(theoretical_sensitivity(RelaxationKind::Box, l, m).unwrap(), 1.0);
            assert_eq!(theoretical_sensitivity(RelaxationKind::HBox, l, m).unwrap(), 1.0);
        }
        assert_eq!(theoretical_sensitivity(RelaxationKind::DeepZ, 6, 10).unwrap(), 18000.0);
        assert_eq!(theoretical_sensitivity(RelaxationKind::CrownIbpR, 4, 2).unwrap(), 10.0);
        assert!(theoretical_sensitivity(RelaxationKind::Triangle, 4, 2).is_err());
        assert!(theoretical_sensitivity(RelaxationKind::Box, 1, 2).is_err());
    }

    #[test]
    fn minimal_example_points() {
        assert!((minimal_crown_l31(-0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((minimal_hbox_l32(0.0).unwrap() + 1.0).abs() < 1e-12);
        assert!(minimal_hbox_l32(1.2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn minimal_report_passes() {
        let r = minimal_examples().unwrap();
        assert!(r.pass, "{:#?}", r.checks);
    }

    #[test]
    fn continuity_of_linear_and_step() {
        let lin = refinement_continuity(0.0, 1.0, 11, 3, |x| Ok(3.0 * x)).unwrap();
        assert!(lin.continuous);
        let step = refinement_continuity(0.0, 1.0, 11, 3, |x| Ok(if x > 0.55 { 1.0 } else { 0.0 })).unwrap();
        assert!(!step.continuous);
    }

    #[test]
    fn steep_ramp_is_not_a_jump() {
        let f = |x: f64| Ok((x * 5.0).clamp(-1.0, 1.0));
        let grid = linspace(-1.0, 1.0, 21);
        let vals: Vec<f64> = grid.iter().map(|&x| f(x).unwrap()).collect();
        assert!(detect_jumps(&grid, &vals, 0.1, 0.5, f).unwrap().is_empty());
    }

    #[test]
    fn poly_residuals_shrink_with_degree() {
        let xs = linspace(-1.0, 1.0, 20);
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x - x).collect();
        let r = poly_fit_residuals(&xs, &ys, 4).unwrap();
        assert!(r[3] < 1e-10 && r[1] > 1e-3);
    }

    #[test]
    fn zero_rate_stays_put() {
        let inst = LandscapeInstance::sample(1);
        match landscape_gd(&inst, RelaxationKind::Box, 0.0, 0.99, 5, 0) {
            Ok(run) => assert!(run.trajectory.iter().all(|&(d, v)| d == 0.0 && v == run.trajectory[0].1)),
            Err(Error::Invalid(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
}
