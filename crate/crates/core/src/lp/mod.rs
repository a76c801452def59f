//! Linear programs: problem representation, a presolving simplex driver
//! with full dual recovery, envelope-theorem value gradients, and LP
//! encodings of network relaxations.
//!
//! Duals follow the Lagrangian of the minimisation form. For
//! `min cᵀx` subject to `Ax = b`, `Gx ≤ h`, `lo ≤ x ≤ hi`:
//!
//! `L = cᵀx + μᵀ(Ax − b) + λᵀ(Gx − h) + ν_loᵀ(lo − x) + ν_hiᵀ(x − hi)`
//!
//! with `λ, ν ≥ 0`. A maximisation is solved as the minimisation of the
//! negated objective; its multipliers are reported for that problem.

mod encode;
mod simplex;

use std::fmt::Write as _;

use thiserror::Error;

pub use encode::{encode_network, lp_bounds, lp_bounds_vars, solve_neuron, LpKind, LpOptions, Sides};

/// Failures of the LP solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    /// No feasible point.
    #[error("LP is infeasible: {0}")]
    Infeasible(String),
    /// The objective is unbounded.
    #[error("LP is unbounded")]
    Unbounded,
    /// The pivot cap was hit.
    #[error("simplex stopped after {pivots} pivots; last basis {basis:?}")]
    IterationLimit {
        /// Pivots made.
        pivots: usize,
        /// Basis at the stop.
        basis: Vec<usize>,
    },
    /// The problem violates its invariants.
    #[error("malformed LP: {0}")]
    Malformed(String),
    /// An encoding needed bounds that were not supplied.
    #[error("missing bounds for layer {0}")]
    MissingBounds(usize),
}

/// Optimization direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    /// Minimize.
    Min,
    /// Maximize.
    Max,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        }
    }
}

/// Sparse row `Σ coeffs · x  (= or ≤)  rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    /// `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    /// Right-hand side.
    pub rhs: f64,
}

impl Row {
    /// Row with the given sparse coefficients and right-hand side.
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    fn coef(&self, var: usize) -> f64 {
        self.coeffs.iter().filter(|(v, _)| *v == var).map(|(_, c)| c).sum()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * x[v]).sum()
    }
}

/// An equality row, optionally naming the variable it defines.
#[derive(Clone, Debug, PartialEq)]
pub struct EqRow {
    /// The constraint.
    pub row: Row,
    /// Variable fully determined by this row, if any.
    pub defines: Option<usize>,
}

/// LP over box-bounded variables with equality and `≤` rows and a single-coordinate objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    /// Lower bound of each variable.
    pub lower: Vec<f64>,
    /// Upper bound of each variable.
    pub upper: Vec<f64>,
    /// Variables whose box is implied by the other constraints; presolve
    /// may drop it when the variable is eliminated.
    pub implied: Vec<bool>,
    /// Equality rows.
    pub eq: Vec<EqRow>,
    /// `≤` rows.
    pub le: Vec<Row>,
    /// Variable to optimize.
    pub objective: usize,
    /// Direction.
    pub sense: Sense,
}

impl LpProblem {
    /// Problem over `n` variables with the given boxes and no rows.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, objective: usize, sense: Sense) -> Self {
        let n = lower.len();
        Self {
            lower,
            upper,
            implied: vec![false; n],
            eq: Vec::new(),
            le: Vec::new(),
            objective,
            sense,
        }
    }

    /// Number of variables.
    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    /// Adds `coeffs · x = rhs`; `defines` names the variable the row defines, if any.
    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, defines: Option<usize>) {
        self.eq.push(EqRow {
            row: Row::new(coeffs, rhs),
            defines,
        });
    }

    /// Adds `coeffs · x ≤ rhs`.
    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.le.push(Row::new(coeffs, rhs));
    }

    /// Checks that rows reference declared variables, coefficients are finite and bounds are ordered.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.upper.len() != n || self.implied.len() != n {
            return Err(LpError::Malformed("bound vectors differ in length".into()));
        }
        if self.objective >= n {
            return Err(LpError::Malformed(format!("objective variable {} out of range", self.objective)));
        }
        let rows = self.eq.iter().map(|e| &e.row).chain(&self.le);
        for (k, r) in rows.enumerate() {
            if !r.rhs.is_finite() {
                return Err(LpError::Malformed(format!("row {k} has a non-finite right-hand side")));
            }
            for &(v, c) in &r.coeffs {
                if v >= n || !c.is_finite() {
                    return Err(LpError::Malformed(format!("row {k} references variable {v} with coefficient {c}")));
                }
            }
        }
        for e in &self.eq {
            if let Some(d) = e.defines {
                if d >= n || e.row.coef(d) == 0.0 {
                    return Err(LpError::Malformed(format!("row cannot define variable {d}")));
                }
            }
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::Malformed(format!("variable {j} has a NaN bound")));
            }
        }
        Ok(())
    }

    /// Text dump: `eq|le` rows with dense coefficients and the right-hand
    /// side, `bounds` lines, then the objective.
    pub fn to_dump(&self) -> String {
        let n = self.num_vars();
        let mut s = String::new();
        let dense = |r: &Row| {
            let mut d = vec![0.0; n];
            for &(v, c) in &r.coeffs {
                d[v] += c;
            }
            d.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
        };
        for e in &self.eq {
            writeln!(s, "eq {} {:?}", dense(&e.row), e.row.rhs).unwrap();
        }
        for r in &self.le {
            writeln!(s, "le {} {:?}", dense(r), r.rhs).unwrap();
        }
        for j in 0..n {
            writeln!(s, "bounds {j} {:?} {:?}", self.lower[j], self.upper[j]).unwrap();
        }
        let dir = match self.sense {
            Sense::Min => "min",
            Sense::Max => "max",
        };
        writeln!(s, "{dir} {}", self.objective).unwrap();
        s
    }
}

/// Optimal point, value and duals of an LP.
#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    /// Optimal value of the objective in its stated sense.
    pub value: f64,
    /// Optimal point.
    pub x: Vec<f64>,
    /// Multipliers of the minimisation form (see module docs).
    pub eq_duals: Vec<f64>,
    /// Multipliers of the `≤` rows (non-negative).
    pub le_duals: Vec<f64>,
    /// Multipliers of active lower bounds (non-negative).
    pub lower_duals: Vec<f64>,
    /// Multipliers of active upper bounds (non-negative).
    pub upper_duals: Vec<f64>,
    /// Inequality rows with zero slack at the optimum.
    pub active: Vec<usize>,
    /// Some basic variable sits on a bound, so the duals may not be unique.
    pub degenerate: bool,
    /// Simplex pivots used.
    pub pivots: usize,
}

impl LpSolution {
    /// Value of the dual objective; equals `value` at optimality.
    pub fn dual_value(&self, p: &LpProblem) -> f64 {
        let mut d = 0.0;
        for (e, &mu) in p.eq.iter().zip(&self.eq_duals) {
            d -= mu * e.row.rhs;
        }
        for (r, &lam) in p.le.iter().zip(&self.le_duals) {
            d -= lam * r.rhs;
        }
        for j in 0..p.num_vars() {
            if self.lower_duals[j] != 0.0 {
                d += self.lower_duals[j] * p.lower[j];
            }
            if self.upper_duals[j] != 0.0 {
                d -= self.upper_duals[j] * p.upper[j];
            }
        }
        p.sense.sign() * d
    }
}

/// Objective-independent reduction of a problem: every equality row
/// eliminates one variable, single-variable rows become bounds.
pub(crate) struct Presolved {
    n: usize,
    /// Reduced index of each surviving variable.
    free: Vec<Option<usize>>,
    free_vars: Vec<usize>,
    /// Affine expression of each original variable over original free
    /// variables: `(coeffs indexed by original var, constant)`.
    expr: Vec<Option<(Vec<f64>, f64)>>,
    /// Elimination order: `(eq row, variable)`.
    order: Vec<(usize, usize)>,
    triangular: bool,
    red: simplex::Reduced,
    /// For each reduced row, the original `le` row (or the bound of an
    /// eliminated variable: `Err((var, is_upper))`).
    row_src: Vec<std::result::Result<usize, (usize, bool)>>,
    lo_src: Vec<Option<std::result::Result<usize, (usize, bool)>>>,
    hi_src: Vec<Option<std::result::Result<usize, (usize, bool)>>>,
}

type Src = std::result::Result<usize, (usize, bool)>;

impl Presolved {
    pub fn new(p: &LpProblem) -> Result<Self, LpError> {
        p.validate()?;
        let n = p.num_vars();
        let mut expr: Vec<Option<(Vec<f64>, f64)>> = vec![None; n];
        let mut order: Vec<(usize, usize)> = Vec::with_capacity(p.eq.len());
        let mut triangular = true;
        for (k, e) in p.eq.iter().enumerate() {
            // Current form of the row over surviving variables.
            let (coef, rhs) = substitute(&e.row, &expr, n);
            let var = match e.defines {
                Some(d) if expr[d].is_none() && coef[d].abs() > 1e-300 => d,
                _ => {
                    let mut best = None;
                    let mut mag = 0.0;
                    for (j, &c) in coef.iter().enumerate() {
                        if expr[j].is_none() && c.abs() > mag {
                            mag = c.abs();
                            best = Some(j);
                        }
                    }
                    match best {
                        Some(j) if mag > 1e-12 => j,
                        _ => {
                            if rhs.abs() > 1e-9 * (1.0 + rhs.abs()) {
                                return Err(LpError::Infeasible(format!("equality row {k} reduces to 0 = {rhs}")));
                            }
                            continue;
                        }
                    }
                }
            };
            let a = coef[var];
            let mut ex: Vec<f64> = coef.iter().map(|c| -c / a).collect();
            ex[var] = 0.0;
            let c0 = rhs / a;
            // Earlier definitions that mention `var` break the triangular
            // structure used for dual recovery.
            for &(k2, _) in &order {
                if p.eq[k2].row.coef(var) != 0.0 {
                    triangular = false;
                }
            }
            for slot in expr.iter_mut().flatten() {
                let f = slot.0[var];
                if f != 0.0 {
                    slot.0[var] = 0.0;
                    for (s, e) in slot.0.iter_mut().zip(&ex) {
                        *s += f * e;
                    }
                    slot.1 += f * c0;
                }
            }
            expr[var] = Some((ex, c0));
            order.push((k, var));
        }
        let free_vars: Vec<usize> = (0..n).filter(|&j| expr[j].is_none()).collect();
        let mut free = vec![None; n];
        for (r, &j) in free_vars.iter().enumerate() {
            free[j] = Some(r);
        }
        let nr = free_vars.len();
        let mut lo: Vec<f64> = free_vars.iter().map(|&j| p.lower[j]).collect();
        let mut hi: Vec<f64> = free_vars.iter().map(|&j| p.upper[j]).collect();
        let mut lo_src: Vec<Option<Src>> = vec![None; nr];
        let mut hi_src: Vec<Option<Src>> = vec![None; nr];
        let mut rows: Vec<(Row, Src)> = p.le.iter().cloned().enumerate().map(|(i, r)| (r, Ok(i))).collect();
        for &(_, var) in &order {
            if p.implied[var] {
                continue;
            }
            if p.upper[var].is_finite() {
                rows.push((Row::new(vec![(var, 1.0)], p.upper[var]), Err((var, true))));
            }
            if p.lower[var].is_finite() {
                rows.push((Row::new(vec![(var, -1.0)], -p.lower[var]), Err((var, false))));
            }
        }
        let mut g = Vec::new();
        let mut h = Vec::new();
        let mut row_src = Vec::new();
        for (row, src) in rows {
            let (coef, rhs) = substitute(&row, &expr, n);
            let nz: Vec<usize> = (0..n).filter(|&j| coef[j] != 0.0).collect();
            match nz.as_slice() {
                [] => {
                    if rhs < -1e-9 * (1.0 + rhs.abs()) {
                        return Err(LpError::Infeasible(format!("row reduces to 0 ≤ {rhs}")));
                    }
                }
                [j] => {
                    let r = free[*j].unwrap();
                    let c = coef[*j];
                    let bound = rhs / c;
                    if c > 0.0 {
                        if bound <= hi[r] {
                            hi[r] = bound;
                            hi_src[r] = Some(src);
                        }
                    } else if bound >= lo[r] {
                        lo[r] = bound;
                        lo_src[r] = Some(src);
                    }
                }
                _ => {
                    g.push(free_vars.iter().map(|&j| coef[j]).collect());
                    h.push(rhs);
                    row_src.push(src);
                }
            }
        }
        Ok(Self {
            n,
            free,
            free_vars,
            expr,
            order,
            triangular,
            red: simplex::Reduced {
                c: vec![0.0; nr],
                g,
                h,
                lo,
                hi,
            },
            row_src,
            lo_src,
            hi_src,
        })
    }

    /// Solves the problem for `sense · x[objective]`.
    pub fn solve(&self, p: &LpProblem, objective: usize, sense: Sense) -> Result<LpSolution, LpError> {
        let n = self.n;
        let s = sense.sign();
        let (mut c, c0) = match &self.expr[objective] {
            Some((ex, c0)) => (ex.clone(), *c0),
            None => {
                let mut c = vec![0.0; n];
                c[objective] = 1.0;
                (c, 0.0)
            }
        };
        for v in c.iter_mut() {
            *v *= s;
        }
        let mut red = self.red.clone();
        red.c = self.free_vars.iter().map(|&j| c[j]).collect();
        let rs = simplex::solve(&red)?;

        let mut x = vec![0.0; n];
        for (r, &j) in self.free_vars.iter().enumerate() {
            x[j] = rs.y[r];
        }
        for &(_, var) in &self.order {
            let (ex, k) = self.expr[var].as_ref().unwrap();
            x[var] = k + self.free_vars.iter().map(|&j| ex[j] * x[j]).sum::<f64>();
        }
        let value_min = rs.value + s * c0;

        let mut le_duals = vec![0.0; p.le.len()];
        let mut lower_duals = vec![0.0; n];
        let mut upper_duals = vec![0.0; n];
        let credit = |src: &Src, val: f64, le: &mut Vec<f64>, lo: &mut Vec<f64>, up: &mut Vec<f64>| match src {
            Ok(i) => le[*i] += val,
            Err((v, true)) => up[*v] += val,
            Err((v, false)) => lo[*v] += val,
        };
        for (k, src) in self.row_src.iter().enumerate() {
            credit(src, rs.row_duals[k], &mut le_duals, &mut lower_duals, &mut upper_duals);
        }
        for (r, &j) in self.free_vars.iter().enumerate() {
            match &self.lo_src[r] {
                Some(src) => credit(src, rs.lower_duals[r], &mut le_duals, &mut lower_duals, &mut upper_duals),
                None => lower_duals[j] += rs.lower_duals[r],
            }
            match &self.hi_src[r] {
                Some(src) => credit(src, rs.upper_duals[r], &mut le_duals, &mut lower_duals, &mut upper_duals),
                None => upper_duals[j] += rs.upper_duals[r],
            }
        }
        // Stationarity residual ρ = c + Gᵀλ − ν_lo + ν_hi over original
        // variables; equality multipliers cancel it on eliminated ones.
        let mut rho = vec![0.0; n];
        rho[objective] += s;
        for (row, &lam) in p.le.iter().zip(&le_duals) {
            if lam != 0.0 {
                for &(v, cf) in &row.coeffs {
                    rho[v] += lam * cf;
                }
            }
        }
        for j in 0..n {
            rho[j] += upper_duals[j] - lower_duals[j];
        }
        let mut eq_duals = vec![0.0; p.eq.len()];
        if self.triangular {
            for &(k, var) in self.order.iter().rev() {
                let row = &p.eq[k].row;
                let mu = -rho[var] / row.coef(var);
                eq_duals[k] = mu;
                for &(v, cf) in &row.coeffs {
                    rho[v] += mu * cf;
                }
            }
        } else {
            let m = self.order.len();
            let mut a = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for (i, &(_, var)) in self.order.iter().enumerate() {
                rhs[i] = -rho[var];
                for (col, &(k, _)) in self.order.iter().enumerate() {
                    a[i * m + col] = p.eq[k].row.coef(var);
                }
            }
            let mu = dense_solve(a, rhs, m).ok_or_else(|| LpError::Malformed("singular equality system".into()))?;
            for (col, &(k, _)) in self.order.iter().enumerate() {
                eq_duals[k] = mu[col];
            }
        }
        let active = p
            .le
            .iter()
            .enumerate()
            .filter(|(_, r)| (r.rhs - r.eval(&x)).abs() <= 1e-9 * (1.0 + r.rhs.abs()))
            .map(|(i, _)| i)
            .collect();
        let _ = &self.free;
        Ok(LpSolution {
            value: s * value_min,
            x,
            eq_duals,
            le_duals,
            lower_duals,
            upper_duals,
            active,
            degenerate: rs.degenerate,
            pivots: rs.pivots,
        })
    }
}

/// Expresses `row` over the surviving variables.
fn substitute(row: &Row, expr: &[Option<(Vec<f64>, f64)>], n: usize) -> (Vec<f64>, f64) {
    let mut coef = vec![0.0; n];
    let mut rhs = row.rhs;
    for &(v, c) in &row.coeffs {
        match &expr[v] {
            None => coef[v] += c,
            Some((ex, k)) => {
                for (a, e) in coef.iter_mut().zip(ex) {
                    *a += c * e;
                }
                rhs -= c * k;
            }
        }
    }
    (coef, rhs)
}

fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if a[p * n + k].abs() < 1e-14 {
            return None;
        }
        for j in 0..n {
            a.swap(k * n + j, p * n + j);
        }
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}

/// Solves `p` for its stated objective.
pub fn simplex_solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    Presolved::new(p)?.solve(p, p.objective, p.sense)
}

/// Derivative of the problem data with respect to one scalar parameter,
/// as sparse entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpDerivative {
    /// `(eq row, variable, ∂a)`.
    pub eq_coeffs: Vec<(usize, usize, f64)>,
    /// `(eq row, ∂b)`.
    pub eq_rhs: Vec<(usize, f64)>,
    /// `(le row, variable, ∂g)`.
    pub le_coeffs: Vec<(usize, usize, f64)>,
    /// `(le row, ∂h)`.
    pub le_rhs: Vec<(usize, f64)>,
    /// `(variable, ∂l)`.
    pub lower: Vec<(usize, f64)>,
    /// `(variable, ∂u)`.
    pub upper: Vec<(usize, f64)>,
}

/// Envelope-theorem derivative of the optimal value, one entry per
/// parameter: `∂L/∂θ` at the optimal primal-dual pair.
pub fn lp_value_gradient(sol: &LpSolution, p: &LpProblem, sens: &[LpDerivative]) -> Vec<f64> {
    let s = p.sense.sign();
    sens.iter()
        .map(|d| {
            let mut g = 0.0;
            for &(k, v, da) in &d.eq_coeffs {
                g += sol.eq_duals[k] * da * sol.x[v];
            }
            for &(k, db) in &d.eq_rhs {
                g -= sol.eq_duals[k] * db;
            }
            for &(k, v, dg) in &d.le_coeffs {
                g += sol.le_duals[k] * dg * sol.x[v];
            }
            for &(k, dh) in &d.le_rhs {
                g -= sol.le_duals[k] * dh;
            }
            for &(j, dl) in &d.lower {
                g += sol.lower_duals[j] * dl;
            }
            for &(j, du) in &d.upper {
                g -= sol.upper_duals[j] * du;
            }
            s * g
        })
        .collect()
}
