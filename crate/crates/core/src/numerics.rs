//! Quadrature, bracketing root finding and finite differences.
//!
//! Every integral in the crate goes through composite Simpson on a fixed
//! panel count, so repeated evaluations are bit-reproducible.

use serde::Serialize;

use crate::error::NumericsError;

/// Composite Simpson rule with a fixed, even number of panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Quadrature {
    panel_count: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { panel_count: 4096 }
    }
}

impl Quadrature {
    pub fn new(panel_count: usize) -> Result<Self, NumericsError> {
        if panel_count < 2 || !panel_count.is_multiple_of(2) {
            return Err(NumericsError::InvalidPanelCount(panel_count));
        }
        Ok(Self { panel_count })
    }

    pub fn panel_count(&self) -> usize {
        self.panel_count
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate<F>(&self, f: F, a: f64, b: f64) -> Result<f64, NumericsError>
    where
        F: Fn(f64) -> f64,
    {
        if !(a <= b) {
            return Err(NumericsError::InvalidInterval { lo: a, hi: b });
        }
        if a == b {
            return Ok(0.0);
        }
        let n = self.panel_count;
        let h = (b - a) / n as f64;
        let mut odd = 0.0;
        let mut even = 0.0;
        let fa = checked(&f, a)?;
        let fb = checked(&f, b)?;
        for i in 1..n {
            let x = a + i as f64 * h;
            let v = checked(&f, x)?;
            if i % 2 == 1 {
                odd += v;
            } else {
                even += v;
            }
        }
        Ok(h / 3.0 * (fa + fb + 4.0 * odd + 2.0 * even))
    }
}

fn checked<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64, NumericsError> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NumericsError::NonFinite { at: x })
    }
}

/// Simpson sum of uniformly spaced samples.
///
/// An even panel count uses plain composite Simpson; an odd one closes the
/// last three panels with the 3/8 rule. Two samples fall back to trapezoid.
pub fn simpson_samples(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        3 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        _ => {
            let panels = n - 1;
            if panels.is_multiple_of(2) {
                simpson_even(values, h)
            } else {
                let k = n - 4;
                simpson_even(&values[..=k], h)
                    + 3.0 * h / 8.0
                        * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3])
            }
        }
    }
}

fn simpson_even(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Running integral `out[j] = ∫_{x_0}^{x_j} f` of uniformly spaced samples.
///
/// Even nodes carry composite Simpson sums; each odd node adds the
/// quadratic-interpolant integral over its half panel, so every entry is
/// fourth-order accurate locally.
pub fn cumulative_integral(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    let mut j = 0;
    while j + 2 < n {
        let (f0, f1, f2) = (values[j], values[j + 1], values[j + 2]);
        out[j + 1] = out[j] + h / 12.0 * (5.0 * f0 + 8.0 * f1 - f2);
        out[j + 2] = out[j] + h / 3.0 * (f0 + 4.0 * f1 + f2);
        j += 2;
    }
    if j + 1 < n {
        // odd panel count: last panel from the backward quadratic
        let (fm, f0, f1) = (values[j - 1], values[j], values[j + 1]);
        out[j + 1] = out[j] + h / 12.0 * (-fm + 8.0 * f0 + 5.0 * f1);
    }
    out
}

/// Scan-and-bisect configuration for [`find_roots`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootScanConfig {
    pub scan_points: usize,
    pub abs_tol: f64,
    pub max_bisect_iters: usize,
}

impl Default for RootScanConfig {
    fn default() -> Self {
        Self {
            scan_points: 2000,
            abs_tol: 1e-10,
            max_bisect_iters: 200,
        }
    }
}

impl RootScanConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.scan_points < 2 || !(self.abs_tol > 0.0) {
            return Err(NumericsError::InvalidScanConfig {
                scan_points: self.scan_points,
                abs_tol: self.abs_tol,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RootKind {
    SignChange,
    Tangent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Root {
    pub x: f64,
    pub kind: RootKind,
}

impl Root {
    pub fn is_tangent(&self) -> bool {
        self.kind == RootKind::Tangent
    }
}

/// All real roots of `g` on `[lo, hi]`, in increasing order.
///
/// Sign changes on the scan mesh are bisected to `abs_tol`. Local minima of
/// `|g|` below `sqrt(abs_tol)` without a sign change are refined as tangency
/// candidates (bisection on the derivative, golden section as fallback) and
/// kept as `Tangent` roots when the refined residual is within `100 * abs_tol`.
pub fn find_roots<G>(g: G, lo: f64, hi: f64, cfg: &RootScanConfig) -> Result<Vec<Root>, NumericsError>
where
    G: Fn(f64) -> f64,
{
    cfg.validate()?;
    if !(lo < hi) {
        return Err(NumericsError::InvalidInterval { lo, hi });
    }
    let n = cfg.scan_points;
    let step = (hi - lo) / (n - 1) as f64;
    let mesh: Vec<(f64, f64)> = (0..n)
        .filter_map(|k| {
            let x = if k == n - 1 { hi } else { lo + k as f64 * step };
            let v = g(x);
            if v.is_finite() {
                Some((x, v))
            } else {
                log::warn!("find_roots: non-finite g({x}) skipped");
                None
            }
        })
        .collect();

    let mut roots = Vec::new();
    let mut sign_change_at = vec![false; mesh.len()];
    for k in 0..mesh.len().saturating_sub(1) {
        let (xa, ga) = mesh[k];
        let (xb, gb) = mesh[k + 1];
        if ga == 0.0 {
            continue;
        }
        if gb == 0.0 {
            // exact zero on a node; classified below
            continue;
        }
        if ga.signum() != gb.signum() {
            roots.push(Root {
                x: bisect(&g, xa, xb, ga, cfg),
                kind: RootKind::SignChange,
            });
            sign_change_at[k] = true;
            sign_change_at[k + 1] = true;
        }
    }
    for k in 0..mesh.len() {
        let (x, v) = mesh[k];
        if v != 0.0 {
            continue;
        }
        let left = k.checked_sub(1).map(|j| mesh[j].1);
        let right = mesh.get(k + 1).map(|p| p.1);
        let crosses = matches!((left, right), (Some(a), Some(b)) if a * b < 0.0);
        roots.push(Root {
            x,
            kind: if crosses { RootKind::SignChange } else { RootKind::Tangent },
        });
        sign_change_at[k] = true;
    }

    let threshold = cfg.abs_tol.sqrt();
    for k in 0..mesh.len() {
        let (x, v) = mesh[k];
        if sign_change_at[k] || v.abs() >= threshold {
            continue;
        }
        let left = k.checked_sub(1).map(|j| mesh[j]);
        let right = mesh.get(k + 1).copied();
        let is_min = left.is_none_or(|(_, a)| v.abs() <= a.abs())
            && right.is_none_or(|(_, b)| v.abs() <= b.abs());
        let neighbour_crossing = left.is_some_and(|(_, a)| a * v < 0.0)
            || right.is_some_and(|(_, b)| b * v < 0.0);
        if !is_min || neighbour_crossing {
            continue;
        }
        let a = left.map_or(x, |p| p.0);
        let b = right.map_or(x, |p| p.0);
        let xr = refine_tangent(&g, a, b, x, cfg);
        let gr = g(xr);
        if gr.is_finite() && gr.abs() <= 100.0 * cfg.abs_tol {
            roots.push(Root {
                x: xr,
                kind: RootKind::Tangent,
            });
        }
    }

    roots.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut out: Vec<Root> = Vec::with_capacity(roots.len());
    for r in roots {
        match out.last_mut() {
            Some(last) if (r.x - last.x).abs() <= 10.0 * cfg.abs_tol => {
                if r.kind == RootKind::SignChange {
                    last.kind = RootKind::SignChange;
                }
            }
            _ => out.push(r),
        }
    }
    Ok(out)
}

fn bisect<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64, mut ga: f64, cfg: &RootScanConfig) -> f64 {
    for _ in 0..cfg.max_bisect_iters {
        if 0.5 * (b - a) <= cfg.abs_tol {
            break;
        }
        let mid = 0.5 * (a + b);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if !gm.is_finite() {
            break;
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Bisection of `g` on a bracket `[a, b]` with a sign change.
///
/// Returns `None` when the endpoints do not bracket a root.
pub fn bisect_bracket<G: Fn(f64) -> f64>(g: G, a: f64, b: f64, cfg: &RootScanConfig) -> Option<f64> {
    let ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return Some(a);
    }
    if gb == 0.0 {
        return Some(b);
    }
    if !(ga.is_finite() && gb.is_finite()) || ga.signum() == gb.signum() {
        return None;
    }
    Some(bisect(&g, a, b, ga, cfg))
}

fn refine_tangent<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, x0: f64, cfg: &RootScanConfig) -> f64 {
    let slope = |x: f64| central_difference(g, x);
    if a < b {
        let (da, db) = (slope(a), slope(b));
        if da.is_finite() && db.is_finite() && da * db < 0.0 {
            return bisect(&slope, a, b, da, cfg);
        }
        return golden_min_abs(g, a, b, cfg);
    }
    x0
}

fn golden_min_abs<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64, cfg: &RootScanConfig) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = g(c).abs();
    let mut fd = g(d).abs();
    for _ in 0..cfg.max_bisect_iters {
        if b - a <= cfg.abs_tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c).abs();
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d).abs();
        }
    }
    0.5 * (a + b)
}

/// Step used by the first-derivative central difference.
pub fn difference_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// `(f(x+h) - f(x-h)) / 2h` with `h = 1e-6 max(1, |x|)`, no finiteness checks.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = difference_step(x);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Checked central difference.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64) -> Result<f64, NumericsError> {
    let h = difference_step(x);
    let hi = f(x + h);
    if !hi.is_finite() {
        return Err(NumericsError::NonFinite { at: x + h });
    }
    let lo = f(x - h);
    if !lo.is_finite() {
        return Err(NumericsError::NonFinite { at: x - h });
    }
    Ok((hi - lo) / (2.0 * h))
}

/// Step for second-order differences; larger than [`difference_step`]
/// because the rounding error scales with `1/h^2`.
pub fn second_difference_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Three-point second difference.
pub fn second_difference<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = second_difference_step(x);
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}
