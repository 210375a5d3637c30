//! Equilibrium branches as functions of the inflow `C`, and fold location.

use serde::Serialize;

use crate::config::Numerics;
use crate::equilibrium::{count_equilibria, find_equilibria, net_growth, net_growth_derivative};
use crate::error::{Error, Result};
use crate::model::ModelIngredients;
use crate::numerics::RootScanConfig;
use crate::spectral::{classify, Classification};

/// Width of the `C` bracket produced by root-count bisection.
pub const COUNT_BISECTION_WIDTH: f64 = 1e-4;
/// Largest `|Delta P|` accepted when extending a branch curve.
pub const BRANCH_JUMP_GUARD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPoint {
    pub p_star: f64,
    pub dq: f64,
    pub tangent: bool,
    pub classification: Option<Classification>,
    /// Set when the stability analysis failed at this point.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramEntry {
    pub c: f64,
    pub trivial: bool,
    /// Ordered by increasing `P*`.
    pub points: Vec<BranchPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fold {
    pub c_star: f64,
    pub p_fold: f64,
    /// `Q_{C*}(P_fold) - 1`.
    pub residual: f64,
    /// `Q'_{C*}(P_fold)`.
    pub slope: f64,
}

/// One equilibrium branch followed across the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchCurve {
    /// `(C, P*)` pairs in sweep order.
    pub points: Vec<(f64, f64)>,
    pub classifications: Vec<Option<Classification>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationDiagram {
    pub entries: Vec<DiagramEntry>,
    pub folds: Vec<Fold>,
    pub curves: Vec<BranchCurve>,
}

impl BifurcationDiagram {
    pub fn branch_counts(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.points.len()).collect()
    }
}

/// Equilibria and their stability at each `C`, with folds located between
/// consecutive values whose root counts differ.
pub fn sweep(model: &ModelIngredients, c_values: &[f64], num: &Numerics) -> Result<BifurcationDiagram> {
    num.validate()?;
    if c_values.is_empty() {
        return Err(Error::InvalidConfig("empty C sweep".into()));
    }
    if let Some(c) = c_values.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
        return Err(Error::InvalidInflow(*c));
    }
    if c_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("C values must be strictly increasing".into()));
    }
    let mut entries = Vec::with_capacity(c_values.len());
    for &c in c_values {
        entries.push(match find_equilibria(model, c, num) {
            Ok(set) => DiagramEntry {
                c,
                trivial: set.trivial,
                points: set
                    .points
                    .iter()
                    .map(|eq| {
                        let (classification, error) = match classify(model, eq, num, false) {
                            Ok(r) => (Some(r.classification), None),
                            Err(e) => (None, Some(e.to_string())),
                        };
                        BranchPoint { p_star: eq.p_star, dq: eq.dq, tangent: eq.tangent, classification, error }
                    })
                    .collect(),
                error: None,
            },
            Err(e) => {
                log::warn!("equilibrium search failed at C = {c}: {e}");
                DiagramEntry { c, trivial: c == 0.0, points: Vec::new(), error: Some(e.to_string()) }
            }
        });
    }
    let mut folds = Vec::new();
    for w in entries.windows(2) {
        if w[0].error.is_some() || w[1].error.is_some() || w[0].points.len() == w[1].points.len() {
            continue;
        }
        match locate_fold(model, w[0].c, w[1].c, num) {
            Ok(f) => folds.push(f),
            Err(e) => log::warn!("fold refinement in [{}, {}] failed: {e}", w[0].c, w[1].c),
        }
    }
    let curves = match_branches(&entries);
    Ok(BifurcationDiagram { entries, folds, curves })
}

/// Greedy nearest-`P` continuation of branches from one `C` to the next.
fn match_branches(entries: &[DiagramEntry]) -> Vec<BranchCurve> {
    let mut curves: Vec<BranchCurve> = Vec::new();
    // indices of curves that reached the previous entry
    let mut active: Vec<usize> = Vec::new();
    for e in entries {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (k, pt) in e.points.iter().enumerate() {
            for &ci in &active {
                let last = curves[ci].points.last().unwrap().1;
                let d = (pt.p_star - last).abs();
                if d <= BRANCH_JUMP_GUARD {
                    pairs.push((d, k, ci));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut point_taken = vec![false; e.points.len()];
        let mut curve_taken: Vec<usize> = Vec::new();
        let mut next_active = Vec::new();
        for (_, k, ci) in pairs {
            if point_taken[k] || curve_taken.contains(&ci) {
                continue;
            }
            point_taken[k] = true;
            curve_taken.push(ci);
            curves[ci].points.push((e.c, e.points[k].p_star));
            curves[ci].classifications.push(e.points[k].classification);
            next_active.push(ci);
        }
        for (k, pt) in e.points.iter().enumerate() {
            if !point_taken[k] {
                curves.push(BranchCurve { points: vec![(e.c, pt.p_star)], classifications: vec![pt.classification] });
                next_active.push(curves.len() - 1);
            }
        }
        active = next_active;
    }
    curves
}

/// Locate the fold between `c_lo` and `c_hi`, where the number of positive
/// equilibria in `num.population_window` changes.
///
/// Root-count bisection narrows `C` to [`COUNT_BISECTION_WIDTH`]; the fold is
/// then polished by solving `Q_C(P) = 1`, `Q'_C(P) = 0` with nested bisections.
pub fn locate_fold(model: &ModelIngredients, c_lo: f64, c_hi: f64, num: &Numerics) -> Result<Fold> {
    num.validate()?;
    if !(c_lo >= 0.0 && c_lo < c_hi && c_hi.is_finite()) {
        return Err(Error::InvalidConfig(format!("fold window needs 0 <= C_lo < C_hi, got [{c_lo}, {c_hi}]")));
    }
    let n_lo = count_equilibria(model, c_lo, num)?;
    let n_hi = count_equilibria(model, c_hi, num)?;
    if n_lo == n_hi {
        return Err(Error::NoFold { lo: c_lo, hi: c_hi });
    }
    // Bisect towards the last count change first; a change caused by a root
    // crossing the edge of the population window has no tangency, in which
    // case the first change is tried instead.
    let last = count_bisection(model, c_lo, c_hi, |n| n == n_hi, num)?;
    match polish(model, last, (c_lo, c_hi), num) {
        Err(Error::NoFold { .. }) => {
            let first = count_bisection(model, c_lo, c_hi, |n| n != n_lo, num)?;
            polish(model, first, (c_lo, c_hi), num)
        }
        other => other,
    }
    .map_err(|e| match e {
        Error::NoFold { .. } => Error::NoFold { lo: c_lo, hi: c_hi },
        e => e,
    })
}

/// Narrow `[lo, hi]` to [`COUNT_BISECTION_WIDTH`] keeping `right(count(hi))`
/// true and `right(count(lo))` false.
fn count_bisection<F: Fn(usize) -> bool>(
    model: &ModelIngredients,
    lo: f64,
    hi: f64,
    right: F,
    num: &Numerics,
) -> Result<(f64, f64)> {
    let (mut a, mut b) = (lo, hi);
    while b - a > COUNT_BISECTION_WIDTH {
        let mid = 0.5 * (a + b);
        if right(count_equilibria(model, mid, num)?) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok((a, b))
}

/// Solve the tangency system for `C` near `[a, b]`, tracking the pair of
/// roots that merges there. The scan can miss a closely spaced pair, so the
/// count change may sit slightly past the true fold; the bracket is then
/// extended towards the side with fewer roots, up to `window`.
fn polish(model: &ModelIngredients, (a, b): (f64, f64), window: (f64, f64), num: &Numerics) -> Result<Fold> {
    let no_fold = || Error::NoFold { lo: a, hi: b };
    let (n_a, n_b) = (count_equilibria(model, a, num)?, count_equilibria(model, b, num)?);
    let more = if n_a > n_b { a } else { b };
    let q = &num.quadrature;
    let roots: Vec<f64> = find_equilibria(model, more, num)?.points.iter().map(|e| e.p_star).collect();
    let (lo_p, hi_p) = num.population_window;

    // the merging pair is the adjacent pair whose enclosed extremum of Q_C is closest to 1
    let mut best: Option<(f64, (f64, f64))> = None;
    for w in roots.windows(2) {
        let bracket = widen(w[0], w[1], lo_p, hi_p);
        if let Some(pc) = critical_point(model, more, bracket, num) {
            let g = net_growth(model, more, pc, q)? - 1.0;
            if best.is_none_or(|(bg, _)| g.abs() < bg.abs()) {
                best = Some((g, bracket));
            }
        }
    }
    // a lone tangent root
    if best.is_none() {
        if let Some(&r) = roots.iter().min_by(|x, y| {
            let gx = net_growth_derivative(model, more, **x, q).map(f64::abs).unwrap_or(f64::INFINITY);
            let gy = net_growth_derivative(model, more, **y, q).map(f64::abs).unwrap_or(f64::INFINITY);
            gx.total_cmp(&gy)
        }) {
            let span = 0.1 * r.max(1e-3);
            best = Some((0.0, ((r - span).max(lo_p), (r + span).min(hi_p))));
        }
    }
    let (_, bracket) = best.ok_or_else(no_fold)?;

    let tangency = |c: f64| -> Option<(f64, f64)> {
        let pc = critical_point(model, c, bracket, num)?;
        Some((net_growth(model, c, pc, q).ok()? - 1.0, pc))
    };
    let tol = num.roots.abs_tol;
    let (ga, pa) = tangency(more).ok_or_else(no_fold)?;
    let fewer = if more == a { b } else { a };
    let step = fewer - more;
    let mut far = fewer;
    let (mut gb, mut pb) = tangency(far).ok_or_else(no_fold)?;
    let mut k = 0;
    while gb.signum() == ga.signum() && gb.abs() > tol && k < 30 {
        k += 1;
        let next = (more + step * 2f64.powi(k)).clamp(window.0, window.1);
        if next == far {
            break;
        }
        far = next;
        (gb, pb) = tangency(far).ok_or_else(no_fold)?;
    }
    let (a, b) = (more, far);
    let (c_star, p_fold) = if ga.abs() <= tol {
        (a, pa)
    } else if gb.abs() <= tol {
        (b, pb)
    } else if ga.signum() == gb.signum() {
        return Err(no_fold());
    } else {
        let (mut x0, mut x1, mut g0) = (a, b, ga);
        let mut found = (0.5 * (a + b), pa);
        for _ in 0..num.roots.max_bisect_iters {
            let mid = 0.5 * (x0 + x1);
            let Some((gm, pm)) = tangency(mid) else { break };
            found = (mid, pm);
            if gm == 0.0 || (x1 - x0).abs() <= 1e-14 * mid.abs().max(1.0) {
                break;
            }
            if gm.signum() == g0.signum() {
                x0 = mid;
                g0 = gm;
            } else {
                x1 = mid;
            }
        }
        found
    };
    Ok(Fold {
        c_star,
        p_fold,
        residual: net_growth(model, c_star, p_fold, q)? - 1.0,
        slope: net_growth_derivative(model, c_star, p_fold, q)?,
    })
}

fn widen(p0: f64, p1: f64, lo: f64, hi: f64) -> (f64, f64) {
    let pad = 0.25 * (p1 - p0);
    ((p0 - pad).max(lo), (p1 + pad).min(hi))
}

/// Zero of `Q'_C` inside `bracket`, by bisection.
fn critical_point(model: &ModelIngredients, c: f64, bracket: (f64, f64), num: &Numerics) -> Option<f64> {
    let q = &num.quadrature;
    let d = |p: f64| net_growth_derivative(model, c, p, q).unwrap_or(f64::NAN);
    let cfg = RootScanConfig { abs_tol: 1e-13, ..num.roots };
    let (a, b) = bracket;
    let (da, db) = (d(a), d(b));
    if da == 0.0 {
        return Some(a);
    }
    if db == 0.0 {
        return Some(b);
    }
    if da.is_finite() && db.is_finite() && da.signum() != db.signum() {
        return crate::numerics::bisect_bracket(d, a, b, &cfg);
    }
    // no sign change at the ends: scan for one
    let n = 64;
    let mut prev = (a, da);
    for i in 1..=n {
        let x = a + (b - a) * i as f64 / n as f64;
        let v = d(x);
        if v.is_finite() && prev.1.is_finite() && v.signum() != prev.1.signum() {
            return crate::numerics::bisect_bracket(d, prev.0, x, &cfg);
        }
        prev = (x, v);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_example;

    /// Fold of the example from the closed form `R(P) = P^2 e^(2-P) / 4`.
    fn tangency_oracle() -> (f64, f64) {
        let h = |p: f64| p * p * (3.0 - p) * (2.0 - p).exp() - 4.0;
        let (mut a, mut b) = (0.1, 1.5);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if h(a).signum() == h(m).signum() {
                a = m;
            } else {
                b = m;
            }
        }
        let p = 0.5 * (a + b);
        let c = p.powi(3) * (2.0 - p) * (2.0 - p).exp() / (4.0 * (1.0 - (-6f64).exp()));
        (c, p)
    }

    fn fast() -> Numerics {
        let mut n = Numerics { population_window: (1e-3, 10.0), ..Numerics::default() };
        n.roots.scan_points = 1000;
        n
    }

    #[test]
    fn oracle_values() {
        let (c, p) = tangency_oracle();
        assert!((c - 0.386).abs() < 1e-3 && (p - 0.677).abs() < 1e-3, "{c} {p}");
    }

    #[test]
    fn interior_fold_matches_oracle() {
        let m = builtin_example();
        let f = locate_fold(&m, 0.0 + 0.1, 1.0, &fast()).unwrap();
        let (c, p) = tangency_oracle();
        assert!((f.c_star - c).abs() <= 1e-6, "{} vs {c}", f.c_star);
        assert!((f.p_fold - p).abs() <= 1e-4, "{} vs {p}", f.p_fold);
        assert!(f.residual.abs() <= 1e-6);
        assert!(f.slope.abs() <= 1e-5);
    }

    #[test]
    fn fold_at_zero_inflow() {
        let m = builtin_example();
        let mut num = fast();
        num.population_window = (1.0, 3.0);
        let f = locate_fold(&m, 0.0, 0.05, &num).unwrap();
        assert!(f.c_star.abs() <= 1e-6, "{f:?}");
        assert!((f.p_fold - 2.0).abs() <= 1e-4);
    }

    #[test]
    fn window_edge_is_not_a_fold() {
        let m = builtin_example();
        let mut num = fast();
        num.population_window = (0.05, 10.0);
        // the lower root enters the window near C = 0.05; the tangency at C = 0 is found instead
        let f = locate_fold(&m, 0.0, 0.06, &num).unwrap();
        assert!(f.c_star.abs() <= 1e-6);
        assert!(matches!(locate_fold(&m, 0.02, 0.06, &num), Err(Error::NoFold { .. })));
    }

    #[test]
    fn constant_count_has_no_fold() {
        let m = builtin_example();
        assert!(matches!(locate_fold(&m, 0.5, 0.6, &fast()), Err(Error::NoFold { .. })));
    }

    #[test]
    fn sweep_pattern() {
        let m = builtin_example();
        let num = fast();
        let d = sweep(&m, &[0.0, 0.05, 0.1, 0.2, 0.3, 0.5], &num).unwrap();
        assert_eq!(d.branch_counts(), vec![1, 3, 3, 3, 3, 1]);
        assert!(d.entries.iter().all(|e| e.points.iter().all(|p| p.error.is_none())));
        assert!(d.entries[0].trivial && d.entries[0].points[0].tangent);
        assert_eq!(d.entries[0].points[0].classification, Some(Classification::MarginalZeroEigenvalue));
        for e in &d.entries[1..4] {
            let kinds: Vec<_> = e.points.iter().map(|p| p.classification.unwrap()).collect();
            assert_eq!(
                kinds,
                vec![Classification::LinearlyStable, Classification::LinearlyUnstable, Classification::LinearlyStable]
            );
            assert!(e.points.windows(2).all(|w| w[0].p_star < w[1].p_star));
        }
        // beyond P* = 2 + L/(2A) ~ 2.666 the upper branch fails the first positivity condition
        let upper = |e: &DiagramEntry| e.points.last().unwrap().classification.unwrap();
        assert_eq!(upper(&d.entries[4]), Classification::IndeterminatePositivityFails);
        assert_eq!(upper(&d.entries[5]), Classification::IndeterminatePositivityFails);
        assert!(d.entries[5].points[0].p_star > 2.0);
        let (c, _) = tangency_oracle();
        assert_eq!(d.folds.len(), 2);
        assert!(d.folds[0].c_star.abs() < 1e-6);
        assert!((d.folds[1].c_star - c).abs() < 1e-6);
    }

    #[test]
    fn branches_near_zero_inflow() {
        let m = builtin_example();
        let (c_star, _) = tangency_oracle();
        let cs: Vec<f64> = (1..=5).map(|k| k as f64 * c_star / 10.0).collect();
        let d = sweep(&m, &cs, &fast()).unwrap();
        assert_eq!(d.curves.len(), 3);
        let lowest: Vec<f64> = d.entries.iter().map(|e| e.points[0].p_star).collect();
        let middle: Vec<f64> = d.entries.iter().map(|e| e.points[1].p_star).collect();
        assert!(lowest.windows(2).all(|w| w[1] > w[0]));
        assert!(middle.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn branch_matching_respects_jump_guard() {
        let pt = |p| BranchPoint { p_star: p, dq: 0.0, tangent: false, classification: None, error: None };
        let entry = |c, ps: &[f64]| DiagramEntry { c, trivial: false, points: ps.iter().map(|&p| pt(p)).collect(), error: None };
        let curves = match_branches(&[entry(0.0, &[1.0, 3.0]), entry(0.1, &[1.1, 3.9]), entry(0.2, &[1.2])]);
        assert_eq!(curves.len(), 3);
        assert_eq!(curves[0].points, vec![(0.0, 1.0), (0.1, 1.1), (0.2, 1.2)]);
        assert_eq!(curves[1].points, vec![(0.0, 3.0)]);
        assert_eq!(curves[2].points, vec![(0.1, 3.9)]);
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let m = builtin_example();
        assert!(sweep(&m, &[], &fast()).is_err());
        assert!(sweep(&m, &[0.2, 0.1], &fast()).is_err());
        assert!(matches!(sweep(&m, &[-0.1, 0.1], &fast()), Err(Error::InvalidInflow(_))));
    }
}
