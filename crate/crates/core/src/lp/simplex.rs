//! Dense bounded-variable primal simplex.
//!
//! Solves `min cᵀy` subject to `G y ≤ h` and `lo ≤ y ≤ hi` with a two-phase
//! method (artificial variables in phase one). Dantzig pricing switches to
//! Bland's rule during runs of more than `rows` degenerate pivots, which
//! rules out cycling. The final basis is refactorised from
//! the original data so primal values and duals carry no accumulated
//! tableau error.

use super::LpError;

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

/// Problem in the solver's native form. Rows of `g` are dense.
#[derive(Clone, Debug)]
pub struct Reduced {
    pub c: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub y: Vec<f64>,
    pub value: f64,
    /// Row multipliers, `≥ 0`.
    pub row_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub degenerate: bool,
    pub pivots: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum State {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    AtZero,
}

struct Tableau {
    m: usize,
    ncols: usize,
    /// `m × ncols`, row-major: `B⁻¹ A`.
    t: Vec<f64>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    /// Row owning each artificial column.
    art_rows: Vec<usize>,
}

impl Tableau {
    fn col(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let p = self.t[r * nc + q];
        for v in &mut self.t[r * nc..(r + 1) * nc] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for row in before.chunks_mut(nc).chain(after.chunks_mut(nc)) {
            let f = row[q];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
                row[q] = 0.0;
            }
        }
    }
}

fn initial_state(lo: f64, hi: f64, cost: f64) -> (State, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) if cost < 0.0 => (State::AtUpper, hi),
        (true, _) => (State::AtLower, lo),
        (false, true) => (State::AtUpper, hi),
        (false, false) => (State::AtZero, 0.0),
    }
}

pub fn solve(p: &Reduced) -> Result<ReducedSolution, LpError> {
    let n = p.c.len();
    let m = p.h.len();
    for j in 0..n {
        if p.lo[j] > p.hi[j] + FEAS_TOL {
            return Err(LpError::Infeasible(format!(
                "variable {j} has empty range [{}, {}]",
                p.lo[j], p.hi[j]
            )));
        }
    }
    // Columns: structural, slacks, then one artificial per infeasible row.
    let mut x = vec![0.0; n + m];
    let mut state = vec![State::AtLower; n + m];
    let mut lo: Vec<f64> = p.lo.clone();
    let mut hi: Vec<f64> = p.hi.clone();
    lo.extend(std::iter::repeat(0.0).take(m));
    hi.extend(std::iter::repeat(f64::INFINITY).take(m));
    for j in 0..n {
        let (s, v) = initial_state(p.lo[j], p.hi[j].max(p.lo[j]), p.c[j]);
        state[j] = s;
        x[j] = v;
    }
    let resid: Vec<f64> = (0..m)
        .map(|r| p.h[r] - p.g[r].iter().zip(&x[..n]).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let art_rows: Vec<usize> = (0..m).filter(|&r| resid[r] < -FEAS_TOL).collect();
    let na = art_rows.len();
    let ncols = n + m + na;
    lo.extend(std::iter::repeat(0.0).take(na));
    hi.extend(std::iter::repeat(f64::INFINITY).take(na));
    x.extend(std::iter::repeat(0.0).take(na));
    state.extend(std::iter::repeat(State::AtLower).take(na));

    let mut t = vec![0.0; m * ncols];
    let mut basis = vec![0; m];
    let mut art_of_row = vec![None; m];
    for (k, &r) in art_rows.iter().enumerate() {
        art_of_row[r] = Some(n + m + k);
    }
    for r in 0..m {
        let row = &mut t[r * ncols..(r + 1) * ncols];
        row[..n].copy_from_slice(&p.g[r]);
        row[n + r] = 1.0;
        match art_of_row[r] {
            Some(a) => {
                // Row reads `G y + s − a = h` with `a` basic: negate so the
                // basic column is `+e_r`.
                row[a] = -1.0;
                for v in row.iter_mut() {
                    *v = -*v;
                }
                basis[r] = a;
                state[a] = State::Basic(r);
                x[a] = -resid[r];
                x[n + r] = 0.0;
            }
            None => {
                basis[r] = n + r;
                state[n + r] = State::Basic(r);
                x[n + r] = resid[r].max(0.0);
            }
        }
    }
    let mut tab = Tableau {
        m,
        ncols,
        t,
        x,
        lo,
        hi,
        state,
        basis,
        art_rows,
    };
    let mut pivots = 0;
    if na > 0 {
        let mut cost = vec![0.0; ncols];
        for c in cost.iter_mut().skip(n + m) {
            *c = 1.0;
        }
        run_phase(&mut tab, &cost, ncols, &mut pivots)?;
        let infeas: f64 = (n + m..ncols).map(|j| tab.x[j]).sum();
        let scale = 1.0 + p.h.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if infeas > 1e-8 * scale {
            return Err(LpError::Infeasible(format!(
                "phase one left infeasibility {infeas:e}"
            )));
        }
        for j in n + m..ncols {
            tab.hi[j] = 0.0;
            if tab.state[j] == State::AtUpper {
                tab.state[j] = State::AtLower;
            }
            tab.x[j] = tab.x[j].clamp(0.0, 0.0);
        }
    }
    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&p.c);
    run_phase(&mut tab, &cost, n + m, &mut pivots)?;
    finish(p, &tab, pivots)
}

/// Pivots until no column below `enter_limit` improves `cost`.
fn run_phase(tab: &mut Tableau, cost: &[f64], enter_limit: usize, pivots: &mut usize) -> Result<(), LpError> {
    let m = tab.m;
    let nc = tab.ncols;
    let mut d: Vec<f64> = cost.to_vec();
    for (i, &b) in tab.basis.iter().enumerate() {
        let cb = cost[b];
        if cb != 0.0 {
            for j in 0..nc {
                d[j] -= cb * tab.t[i * nc + j];
            }
        }
    }
    let bland_after = m.max(16);
    let bland_cap = 10 * (m + nc);
    let total_cap = 1000 * (m + nc);
    let mut phase_pivots = 0usize;
    let mut bland_pivots = 0usize;
    let mut degenerate_run = 0usize;
    loop {
        let bland = degenerate_run >= bland_after;
        bland_pivots += usize::from(bland);
        if bland_pivots > bland_cap || phase_pivots > total_cap {
            return Err(LpError::IterationLimit {
                pivots: phase_pivots,
                basis: tab.basis.clone(),
            });
        }
        // Pricing.
        let mut enter: Option<(usize, f64)> = None;
        let mut best = 0.0;
        for j in 0..enter_limit {
            let dir = match tab.state[j] {
                State::Basic(_) => continue,
                State::AtLower if d[j] < -OPT_TOL && tab.hi[j] > tab.lo[j] => 1.0,
                State::AtUpper if d[j] > OPT_TOL && tab.hi[j] > tab.lo[j] => -1.0,
                State::AtZero if d[j].abs() > OPT_TOL => -d[j].signum(),
                _ => continue,
            };
            if bland {
                enter = Some((j, dir));
                break;
            }
            if d[j].abs() > best {
                best = d[j].abs();
                enter = Some((j, dir));
            }
        }
        let Some((q, dir)) = enter else {
            return Ok(());
        };
        // Ratio test.
        let mut step = if tab.lo[q].is_finite() && tab.hi[q].is_finite() {
            tab.hi[q] - tab.lo[q]
        } else {
            f64::INFINITY
        };
        let mut leave: Option<(usize, bool)> = None;
        let mut leave_mag = 0.0;
        for i in 0..m {
            let a = tab.col(i, q);
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let b = tab.basis[i];
            let rate = -dir * a;
            let (limit, to_upper) = if rate < 0.0 {
                if !tab.lo[b].is_finite() {
                    continue;
                }
                (((tab.x[b] - tab.lo[b]) / -rate).max(0.0), false)
            } else {
                if !tab.hi[b].is_finite() {
                    continue;
                }
                (((tab.hi[b] - tab.x[b]) / rate).max(0.0), true)
            };
            let better = match leave {
                None => limit < step - 1e-12,
                Some((li, _)) => {
                    limit < step - 1e-12
                        || (limit <= step + 1e-12
                            && if bland {
                                b < tab.basis[li]
                            } else {
                                a.abs() > leave_mag
                            })
                }
            };
            if better {
                step = step.min(limit);
                leave = Some((i, to_upper));
                leave_mag = a.abs();
            }
        }
        if !step.is_finite() {
            return Err(LpError::Unbounded);
        }
        // Move the entering variable and update basic values.
        tab.x[q] += dir * step;
        for i in 0..m {
            let a = tab.col(i, q);
            if a != 0.0 {
                let b = tab.basis[i];
                tab.x[b] -= dir * step * a;
            }
        }
        match leave {
            None => {
                tab.state[q] = if dir > 0.0 { State::AtUpper } else { State::AtLower };
                tab.x[q] = if dir > 0.0 { tab.hi[q] } else { tab.lo[q] };
            }
            Some((r, to_upper)) => {
                let b = tab.basis[r];
                tab.state[b] = if to_upper { State::AtUpper } else { State::AtLower };
                tab.x[b] = if to_upper { tab.hi[b] } else { tab.lo[b] };
                tab.pivot(r, q);
                tab.basis[r] = q;
                tab.state[q] = State::Basic(r);
                let dq = d[q];
                if dq != 0.0 {
                    for j in 0..nc {
                        d[j] -= dq * tab.t[r * nc + j];
                    }
                }
                d[q] = 0.0;
            }
        }
        if step > 0.0 {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
        phase_pivots += 1;
        *pivots += 1;
    }
}

/// Dense LU with partial pivoting; solves `M z = rhs` (or `Mᵀ z = rhs`).
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn new(mut a: Vec<f64>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut pr, mut pv) = (k, a[k * n + k].abs());
            for i in k + 1..n {
                if a[i * n + k].abs() > pv {
                    pv = a[i * n + k].abs();
                    pr = i;
                }
            }
            if pv < 1e-14 {
                return None;
            }
            if pr != k {
                for j in 0..n {
                    a.swap(k * n + j, pr * n + j);
                }
                perm.swap(k, pr);
            }
            let piv = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / piv;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Some(Self { n, lu: a, perm })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for k in 0..i {
                z[i] -= self.lu[i * n + k] * z[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                z[i] -= self.lu[i * n + k] * z[k];
            }
            z[i] /= self.lu[i * n + i];
        }
        z
    }

    fn solve_t(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = rhs.to_vec();
        for i in 0..n {
            for k in 0..i {
                z[i] -= self.lu[k * n + i] * z[k];
            }
            z[i] /= self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                z[i] -= self.lu[k * n + i] * z[k];
            }
        }
        let mut out = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = z[i];
        }
        out
    }
}

fn finish(p: &Reduced, tab: &Tableau, pivots: usize) -> Result<ReducedSolution, LpError> {
    let n = p.c.len();
    let m = p.h.len();
    // Original column `j` of `[G | I | −e_art]`.
    let column = |j: usize, r: usize| -> f64 {
        if j < n {
            p.g[r][j]
        } else if j < n + m {
            if j - n == r {
                1.0
            } else {
                0.0
            }
        } else {
            0.0
        }
    };
    let mut x = tab.x.clone();
    let mut lu = None;
    if m > 0 {
        let mut bm = vec![0.0; m * m];
        for (col, &b) in tab.basis.iter().enumerate() {
            if b >= n + m {
                let r = tab.art_rows[b - n - m];
                bm[r * m + col] = -1.0;
            } else {
                for r in 0..m {
                    bm[r * m + col] = column(b, r);
                }
            }
        }
        lu = Lu::new(bm, m);
        if let Some(lu) = &lu {
            let mut rhs = p.h.clone();
            for j in 0..n + m {
                if !matches!(tab.state[j], State::Basic(_)) && x[j] != 0.0 {
                    for (r, v) in rhs.iter_mut().enumerate() {
                        *v -= column(j, r) * x[j];
                    }
                }
            }
            let xb = lu.solve(&rhs);
            for (i, &b) in tab.basis.iter().enumerate() {
                x[b] = xb[i];
            }
        }
    }
    let y: Vec<f64> = x[..n].to_vec();
    // Duals: π = B⁻ᵀ c_B, reduced costs d = c − Aᵀπ.
    let cb: Vec<f64> = tab
        .basis
        .iter()
        .map(|&b| if b < n { p.c[b] } else { 0.0 })
        .collect();
    let pi = match &lu {
        Some(lu) => lu.solve_t(&cb),
        None => vec![0.0; m],
    };
    let mut row_duals = vec![0.0; m];
    for r in 0..m {
        row_duals[r] = if matches!(tab.state[n + r], State::Basic(_)) {
            0.0
        } else {
            (-pi[r]).max(0.0)
        };
    }
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for j in 0..n {
        if matches!(tab.state[j], State::Basic(_)) {
            continue;
        }
        let dj = p.c[j] - (0..m).map(|r| p.g[r][j] * pi[r]).sum::<f64>();
        match tab.state[j] {
            State::AtLower => lower_duals[j] = dj.max(0.0),
            State::AtUpper => upper_duals[j] = (-dj).max(0.0),
            _ => {}
        }
    }
    let value = p.c.iter().zip(&y).map(|(a, b)| a * b).sum();
    let degenerate = tab.basis.iter().any(|&b| {
        let v = x[b];
        (tab.lo[b].is_finite() && (v - tab.lo[b]).abs() < 1e-9)
            || (tab.hi[b].is_finite() && (tab.hi[b] - v).abs() < 1e-9)
    });
    Ok(ReducedSolution {
        y,
        value,
        row_duals,
        lower_duals,
        upper_duals,
        degenerate,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(c: Vec<f64>, g: Vec<Vec<f64>>, h: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Reduced {
        Reduced { c, g, h, lo, hi }
    }

    #[test]
    fn bounds_only() {
        let s = solve(&lp(vec![1.0, -2.0], vec![], vec![], vec![-1.0, -1.0], vec![1.0, 3.0])).unwrap();
        assert_eq!(s.y, vec![-1.0, 3.0]);
        assert_eq!(s.value, -7.0);
        assert_eq!(s.lower_duals, vec![1.0, 0.0]);
        assert_eq!(s.upper_duals, vec![0.0, 2.0]);
    }

    #[test]
    fn needs_phase_one() {
        // min x + y s.t. x + y ≥ 1, 0 ≤ x, y ≤ 1.
        let s = solve(&lp(
            vec![1.0, 1.0],
            vec![vec![-1.0, -1.0]],
            vec![-1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        ))
        .unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!((s.row_duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let r = solve(&lp(vec![1.0], vec![vec![1.0]], vec![-2.0], vec![0.0], vec![1.0]));
        assert!(matches!(r, Err(LpError::Infeasible(_))));
    }

    #[test]
    fn unbounded_detected() {
        let r = solve(&lp(vec![-1.0], vec![vec![-1.0]], vec![0.0], vec![f64::NEG_INFINITY], vec![f64::INFINITY]));
        assert!(matches!(r, Err(LpError::Unbounded)));
    }

    #[test]
    fn free_variable() {
        // max x s.t. x ≤ 3, −x ≤ 0 as min −x.
        let s = solve(&lp(
            vec![-1.0],
            vec![vec![1.0], vec![-1.0]],
            vec![3.0, 0.0],
            vec![f64::NEG_INFINITY],
            vec![f64::INFINITY],
        ))
        .unwrap();
        assert_eq!(s.y, vec![3.0]);
        assert_eq!(s.row_duals, vec![1.0, 0.0]);
    }
}
