//! Certification verdicts, certified-robustness curves, CR-AUC, cross
//! matrices and accuracy/PGD/CR reports.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bounds::{InputBox, RelaxationKind};
use crate::data::Dataset;
use crate::diagnostics::linspace;
use crate::error::{Error, Result};
use crate::network::{Network, Specification};
use crate::parallel::par_map;
use crate::tensor::argmax;
use crate::training::{output_bounds, pgd_attack, PgdOptions};

/// How certification is carried out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyOptions {
    /// Bound the specification margins on the elided network (default)
    /// instead of comparing `u_{L,y'}` with `l_{L,y}`.
    pub elision: bool,
    /// Clip perturbation boxes to `[0, 1]`.
    pub clip: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            elision: true,
            clip: true,
        }
    }
}

fn input_box(x: &[f64], eps: f64, opts: &CertifyOptions) -> Result<InputBox> {
    InputBox::around(x, eps, opts.clip.then_some((0.0, 1.0)))
}

/// Whether `kind` proves `argmax h(x') = y` for every `x'` in the ε-box.
pub fn certify(
    net: &Network,
    kind: RelaxationKind,
    x: &[f64],
    y: usize,
    eps: f64,
    opts: &CertifyOptions,
) -> Result<bool> {
    if eps < 0.0 {
        return Err(Error::Invalid(format!("negative radius {eps}")));
    }
    let spec = Specification::new(y, net.output_dim())?;
    let input = input_box(x, eps, opts)?;
    if opts.elision {
        let elided = net.elide(&spec)?.vars(None);
        let (_, upper) = output_bounds(&elided, kind, &input, true, true)?;
        Ok(upper.data().iter().all(|&m| m < 0.0))
    } else {
        let (l, u) = output_bounds(&net.vars(None), kind, &input, false, false)?;
        Ok(spec.others().all(|o| u.data()[o] - l.data()[y] < 0.0))
    }
}

/// Kinds whose bounds only loosen as the input box grows, so per-example
/// certification is monotone in ε. Box is interval arithmetic, and the
/// Triangle and Parallelogram sets grow with `[l, u]`.
pub fn monotone_in_eps(kind: RelaxationKind) -> bool {
    matches!(
        kind,
        RelaxationKind::Box | RelaxationKind::Triangle | RelaxationKind::Parallelogram
    )
}

/// Certified fraction of a dataset at each radius of a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrCurve {
    /// Relaxation used.
    pub kind: RelaxationKind,
    /// Description of the evaluated examples.
    pub slice: String,
    /// Radii, ascending from 0.
    pub eps: Vec<f64>,
    /// Certified fraction at each radius.
    pub certified: Vec<f64>,
}

impl CrCurve {
    /// `eps,certified` header plus one row per radius.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,certified\n");
        for (e, c) in self.eps.iter().zip(&self.certified) {
            s.push_str(&format!("{e},{c}\n"));
        }
        s
    }
}

/// Certification verdict at every radius of `eps` (ascending, starting at 0).
fn certified_radii(
    net: &Network,
    kind: RelaxationKind,
    x: &[f64],
    y: usize,
    eps: &[f64],
    opts: &CertifyOptions,
) -> Result<Vec<bool>> {
    let mut out = vec![false; eps.len()];
    if !certify(net, kind, x, y, 0.0, opts)? {
        return Ok(out);
    }
    if monotone_in_eps(kind) {
        // Invariant: eps[lo] certified; eps[hi] not (or past the end).
        let (mut lo, mut hi) = (0, eps.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if certify(net, kind, x, y, eps[mid], opts)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out[..=lo].iter_mut().for_each(|c| *c = true);
    } else {
        out[0] = true;
        for k in 1..eps.len() {
            out[k] = certify(net, kind, x, y, eps[k], opts)?;
        }
    }
    Ok(out)
}

/// Fraction of `data` certified at each of `samples` evenly spaced radii in
/// `[0, eps_max]`. Misclassified examples count as not certified.
///
/// For [`monotone_in_eps`] kinds each example's largest certified grid
/// radius is found by bisection; other kinds are evaluated at every radius.
pub fn cr_curve(
    net: &Network,
    kind: RelaxationKind,
    data: &Dataset,
    eps_max: f64,
    samples: usize,
    opts: &CertifyOptions,
) -> Result<CrCurve> {
    if samples < 2 {
        return Err(Error::Invalid("a CR curve needs at least 2 radii".into()));
    }
    let eps = linspace(0.0, eps_max, samples);
    let idx: Vec<usize> = (0..data.len()).collect();
    let flags = par_map(&idx, |&i| certified_radii(net, kind, &data.inputs[i], data.labels[i], &eps, opts));
    let mut counts = vec![0usize; samples];
    for f in flags {
        for (c, ok) in counts.iter_mut().zip(f?) {
            *c += usize::from(ok);
        }
    }
    let n = data.len().max(1) as f64;
    Ok(CrCurve {
        kind,
        slice: format!("{}[..{}]", data.split, data.len()),
        eps,
        certified: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Trapezoidal area under the curve, in ε·fraction units (×100 with
/// `percent`).
pub fn cr_auc(curve: &CrCurve, percent: bool) -> f64 {
    let area: f64 = curve
        .eps
        .windows(2)
        .zip(curve.certified.windows(2))
        .map(|(e, c)| (e[1] - e[0]) * (c[0] + c[1]) / 2.0)
        .sum();
    if percent {
        100.0 * area
    } else {
        area
    }
}

/// Certified fraction of `data` at radius `eps`.
pub fn certified_fraction(
    net: &Network,
    kind: RelaxationKind,
    data: &Dataset,
    eps: f64,
    opts: &CertifyOptions,
) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut ok = 0usize;
    for v in par_map(&idx, |&i| certify(net, kind, &data.inputs[i], data.labels[i], eps, opts)) {
        ok += usize::from(v?);
    }
    Ok(ok as f64 / data.len().max(1) as f64)
}

/// One row of a train/certify matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossRow {
    /// Label of the trained network.
    pub train: String,
    /// Certified fraction per relaxation.
    pub cr: Vec<(RelaxationKind, f64)>,
}

/// Certified fraction of `data` at `eps` for each of `kinds`, labelled `train_label`.
pub fn cross_matrix(
    net: &Network,
    train_label: &str,
    kinds: &[RelaxationKind],
    data: &Dataset,
    eps: f64,
    opts: &CertifyOptions,
) -> Result<CrossRow> {
    Ok(CrossRow {
        train: train_label.to_string(),
        cr: kinds
            .iter()
            .map(|&k| Ok((k, certified_fraction(net, k, data, eps, opts)?)))
            .collect::<Result<_>>()?,
    })
}

/// `train,<kind>…` header followed by one line per row.
pub fn cross_csv(rows: &[CrossRow]) -> String {
    let mut s = String::from("train");
    if let Some(r) = rows.first() {
        for (k, _) in &r.cr {
            s.push(',');
            s.push_str(k.name());
        }
    }
    s.push('\n');
    for r in rows {
        s.push_str(&r.train);
        for (_, v) in &r.cr {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Accuracy, PGD robustness and certified robustness of one network at one radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Number of examples.
    pub n: usize,
    /// Radius.
    pub eps: f64,
    /// Clean accuracy.
    pub acc: f64,
    /// Fraction correct and not broken by PGD.
    pub pgd: f64,
    /// Certified robustness per relaxation name.
    pub cr: BTreeMap<String, f64>,
}

/// Accuracy, PGD robustness and certified robustness on `data`.
pub fn evaluate(
    net: &Network,
    data: &Dataset,
    eps: f64,
    kinds: &[RelaxationKind],
    opts: &CertifyOptions,
    pgd: &PgdOptions,
) -> Result<EvalReport> {
    let n = data.len().max(1) as f64;
    let idx: Vec<usize> = (0..data.len()).collect();
    let verdicts = par_map(&idx, |&i| -> Result<(bool, bool)> {
        let (x, y) = (&data.inputs[i], data.labels[i]);
        if argmax(&net.forward(x)?) != y {
            return Ok((false, false));
        }
        let (broken, _) = pgd_attack(net, x, y, eps, &PgdOptions { clip: opts.clip, ..*pgd })?;
        Ok((true, !broken))
    });
    let (mut acc, mut robust) = (0usize, 0usize);
    for v in verdicts {
        let (a, r) = v?;
        acc += usize::from(a);
        robust += usize::from(r);
    }
    let mut cr = BTreeMap::new();
    for &k in kinds {
        cr.insert(k.name().to_string(), certified_fraction(net, k, data, eps, opts)?);
    }
    Ok(EvalReport {
        n: data.len(),
        eps,
        acc: acc as f64 / n,
        pgd: robust as f64 / n,
        cr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> CrCurve {
        CrCurve {
            kind: RelaxationKind::Box,
            slice: String::new(),
            eps: points.iter().map(|p| p.0).collect(),
            certified: points.iter().map(|p| p.1).collect(),
        }
    }

    #[test]
    fn auc_examples() {
        assert!((cr_auc(&curve(&[(0.0, 1.0), (0.1, 0.5), (0.2, 0.0)]), false) - 0.1).abs() < 1e-15);
        assert!((cr_auc(&curve(&[(0.0, 1.0), (0.07, 1.0)]), false) - 0.07).abs() < 1e-15);
        let fine = curve(&[(0.0, 1.0), (0.05, 0.75), (0.1, 0.5), (0.15, 0.25), (0.2, 0.0)]);
        assert!((cr_auc(&fine, false) - 0.1).abs() < 1e-12);
        assert!((cr_auc(&fine, true) - 10.0).abs() < 1e-10);
    }

    #[test]
    fn point_certification_is_classification() {
        let net = Network::build(&[3, 6, 4], 2).unwrap();
        let x = [0.2, 0.5, 0.9];
        let y = argmax(&net.forward(&x).unwrap());
        for kind in RelaxationKind::ALL {
            let opts = CertifyOptions::default();
            // CROWN-0 lower-bounds live ReLUs by 0, so it is loose even on a point.
            if kind != RelaxationKind::Crown0 {
                assert!(certify(&net, kind, &x, y, 0.0, &opts).unwrap(), "{kind}");
            }
            assert!(!certify(&net, kind, &x, (y + 1) % 4, 0.0, &opts).unwrap(), "{kind}");
        }
    }
}
