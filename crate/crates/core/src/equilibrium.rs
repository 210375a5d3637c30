//! Survival, net reproduction, net growth, and positive equilibria.
//!
//! With survival `pi(s, P) = exp(-∫_0^s (gamma_s + mu) / gamma)`, a positive
//! stationary density has the shape `p*(s) = P* pi(s, P*) / ∫ pi` and its
//! total population solves `Q_C(P*) = 1`, where
//!
//! ```text
//! Q_C(P) = (C P^-1 ∫ pi + ∫ beta pi) / gamma(0, P) = R(P) + C L(P) / P.
//! ```

use serde::Serialize;

use crate::config::{Numerics, SizeGrid};
use crate::error::{Error, Result};
use crate::model::ModelIngredients;
use crate::numerics::{cumulative_integral, derivative, find_roots, simpson_samples, Quadrature, RootKind};

fn check_population(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositivePopulation(p))
    }
}

/// Survival and the log-survival integrand sampled on `panels + 1` uniform nodes.
#[derive(Debug, Clone)]
pub(crate) struct SurvivalSamples {
    pub h: f64,
    pub nodes: Vec<f64>,
    pub pi: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub(crate) fn survival_samples(model: &ModelIngredients, p: f64, panels: usize) -> Result<SurvivalSamples> {
    let m = model.m();
    let h = m / panels as f64;
    let nodes: Vec<f64> = (0..=panels).map(|j| if j == panels { m } else { j as f64 * h }).collect();
    let mut gamma = Vec::with_capacity(nodes.len());
    let mut rate = Vec::with_capacity(nodes.len());
    for &s in &nodes {
        let g = model.gamma_checked(s, p)?;
        gamma.push(g);
        rate.push((model.gamma_s(s, p) + model.mu(s, p)) / g);
    }
    let pi = cumulative_integral(&rate, h).into_iter().map(|c| (-c).exp()).collect();
    Ok(SurvivalSamples { h, nodes, pi, gamma })
}

/// `pi(s, P)` at a single size.
pub fn survival_pi(model: &ModelIngredients, s: f64, p: f64, q: &Quadrature) -> Result<f64> {
    check_population(p)?;
    if !(0.0..=model.m()).contains(&s) {
        return Err(Error::InvalidConfig(format!("size {s} outside [0, {}]", model.m())));
    }
    let bad = std::cell::Cell::new(None);
    let integral = q.integrate(
        |r| {
            let g = model.gamma(r, p);
            if !(g > 0.0) && bad.get().is_none() {
                bad.set(Some((r, g)));
            }
            (model.gamma_s(r, p) + model.mu(r, p)) / g
        },
        0.0,
        s,
    );
    if let Some((r, g)) = bad.get() {
        return Err(Error::GammaNonPositive { s: r, p, value: g });
    }
    Ok((-integral?).exp())
}

/// The three integrals behind `Q_C`, from one survival pass.
#[derive(Debug, Clone, Copy)]
struct GrowthIntegrals {
    gamma0: f64,
    int_pi: f64,
    int_beta_pi: f64,
}

fn growth_integrals(model: &ModelIngredients, p: f64, q: &Quadrature) -> Result<GrowthIntegrals> {
    check_population(p)?;
    let sv = survival_samples(model, p, q.panel_count())?;
    let beta_pi: Vec<f64> = sv.nodes.iter().zip(&sv.pi).map(|(&s, &pi)| model.beta(s, p) * pi).collect();
    Ok(GrowthIntegrals {
        gamma0: sv.gamma[0],
        int_pi: simpson_samples(&sv.pi, sv.h),
        int_beta_pi: simpson_samples(&beta_pi, sv.h),
    })
}

/// Inherent net reproduction `R(P) = ∫ beta pi / gamma(0, P)`.
pub fn net_reproduction(model: &ModelIngredients, p: f64, q: &Quadrature) -> Result<f64> {
    let g = growth_integrals(model, p, q)?;
    Ok(g.int_beta_pi / g.gamma0)
}

/// Expected lifetime `L(P) = ∫ pi / gamma(0, P)`.
pub fn expected_lifetime(model: &ModelIngredients, p: f64, q: &Quadrature) -> Result<f64> {
    let g = growth_integrals(model, p, q)?;
    Ok(g.int_pi / g.gamma0)
}

/// Net growth rate `Q_C(P)`; positive equilibria are the roots of `Q_C = 1`.
pub fn net_growth(model: &ModelIngredients, c: f64, p: f64, q: &Quadrature) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidInflow(c));
    }
    let g = growth_integrals(model, p, q)?;
    Ok((c / p * g.int_pi + g.int_beta_pi) / g.gamma0)
}

/// `Q'_C(P)` through the model's partial derivatives.
///
/// Uses `pi_P = -pi ∫_0^s [(gamma_sP + mu_P)/gamma - gamma_P (gamma_s + mu)/gamma^2]`.
pub fn net_growth_derivative_partials(model: &ModelIngredients, c: f64, p: f64, q: &Quadrature) -> Result<f64> {
    check_population(p)?;
    let sv = survival_samples(model, p, q.panel_count())?;
    let n = sv.nodes.len();
    let mut w = Vec::with_capacity(n);
    for (j, &s) in sv.nodes.iter().enumerate() {
        let g = sv.gamma[j];
        w.push(
            (model.gamma_sp(s, p) + model.mu_p(s, p)) / g
                - model.gamma_p(s, p) * (model.gamma_s(s, p) + model.mu(s, p)) / (g * g),
        );
    }
    let w_cum = cumulative_integral(&w, sv.h);
    let mut pi_p = Vec::with_capacity(n);
    let mut beta_pi = Vec::with_capacity(n);
    let mut beta_p_pi = Vec::with_capacity(n);
    let mut beta_pi_p = Vec::with_capacity(n);
    for (j, &s) in sv.nodes.iter().enumerate() {
        let dpi = -sv.pi[j] * w_cum[j];
        let b = model.beta(s, p);
        pi_p.push(dpi);
        beta_pi.push(b * sv.pi[j]);
        beta_p_pi.push(model.beta_p(s, p) * sv.pi[j]);
        beta_pi_p.push(b * dpi);
    }
    let h = sv.h;
    let gamma0 = sv.gamma[0];
    let gamma0_p = model.gamma_p(0.0, p);
    let int_pi = simpson_samples(&sv.pi, h);
    let q_value = (c / p * int_pi + simpson_samples(&beta_pi, h)) / gamma0;
    let bracket = -c / (p * p) * int_pi
        + c / p * simpson_samples(&pi_p, h)
        + simpson_samples(&beta_p_pi, h)
        + simpson_samples(&beta_pi_p, h);
    Ok(-gamma0_p / gamma0 * q_value + bracket / gamma0)
}

/// `Q'_C(P)` by central differences of `Q_C`.
pub fn net_growth_derivative_numeric(model: &ModelIngredients, c: f64, p: f64, q: &Quadrature) -> Result<f64> {
    check_population(p)?;
    Ok(derivative(|x| net_growth(model, c, x, q).unwrap_or(f64::NAN), p)?)
}

/// `Q'_C(P)`: analytic partials when the model has them, otherwise differences.
pub fn net_growth_derivative(model: &ModelIngredients, c: f64, p: f64, q: &Quadrature) -> Result<f64> {
    if model.has_analytic_partials() {
        net_growth_derivative_partials(model, c, p, q)
    } else {
        net_growth_derivative_numeric(model, c, p, q)
    }
}

/// `R'(P)` on the same route choice as [`net_growth_derivative`].
pub fn net_reproduction_derivative(model: &ModelIngredients, p: f64, q: &Quadrature) -> Result<f64> {
    net_growth_derivative(model, 0.0, p, q)
}

/// A positive stationary solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub p_star: f64,
    pub c: f64,
    /// Boundary density `p*(0)`.
    pub p0: f64,
    pub grid: SizeGrid,
    /// `p*` at the size-grid nodes.
    pub profile: Vec<f64>,
    /// `Q'_C(P*)`.
    pub dq: f64,
    pub tangent: bool,
    /// `Q_C(P*) - 1`.
    pub residual: f64,
}

impl EquilibriumPoint {
    /// Build the equilibrium sitting at a known root `p_star` of `Q_C = 1`.
    pub fn at(model: &ModelIngredients, c: f64, p_star: f64, tangent: bool, num: &Numerics) -> Result<Self> {
        check_population(p_star)?;
        let q = &num.quadrature;
        let g = growth_integrals(model, p_star, q)?;
        let residual = (c / p_star * g.int_pi + g.int_beta_pi) / g.gamma0 - 1.0;
        let grid = num.size_grid(model.m())?;
        let p0 = p_star / g.int_pi;
        let sv = survival_samples(model, p_star, grid.cells())?;
        let profile = sv.pi.iter().map(|pi| p0 * pi).collect();
        Ok(Self {
            p_star,
            c,
            p0,
            grid,
            profile,
            dq: net_growth_derivative(model, c, p_star, q)?,
            tangent,
            residual,
        })
    }
}

/// Result of an equilibrium search at one inflow value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSet {
    pub c: f64,
    /// `P = 0` is stationary exactly when `C = 0`.
    pub trivial: bool,
    pub points: Vec<EquilibriumPoint>,
    pub window: (f64, f64),
    /// `R` at the top of the window; small values hint that no equilibria lie beyond it.
    pub r_at_window_end: f64,
}

/// All positive roots of `Q_C(P) = 1` inside `num.population_window`.
pub fn find_equilibria(model: &ModelIngredients, c: f64, num: &Numerics) -> Result<EquilibriumSet> {
    num.validate()?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidInflow(c));
    }
    let (lo, hi) = num.population_window;
    let q = &num.quadrature;
    let roots = find_roots(
        |p| net_growth(model, c, p, q).map(|v| v - 1.0).unwrap_or(f64::NAN),
        lo,
        hi,
        &num.roots,
    )?;
    let points = roots
        .iter()
        .map(|r| EquilibriumPoint::at(model, c, r.x, r.kind == RootKind::Tangent, num))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumSet {
        c,
        trivial: c == 0.0,
        points,
        window: (lo, hi),
        r_at_window_end: net_reproduction(model, hi, q)?,
    })
}

/// Number of positive equilibria in the window (tangent roots count once).
pub fn count_equilibria(model: &ModelIngredients, c: f64, num: &Numerics) -> Result<usize> {
    let (lo, hi) = num.population_window;
    let q = &num.quadrature;
    Ok(find_roots(
        |p| net_growth(model, c, p, q).map(|v| v - 1.0).unwrap_or(f64::NAN),
        lo,
        hi,
        &num.roots,
    )?
    .len())
}

/// `p*(s) = P* pi(s, P*) / ∫ pi` on the size grid.
pub fn equilibrium_profile(model: &ModelIngredients, p_star: f64, num: &Numerics) -> Result<Vec<f64>> {
    check_population(p_star)?;
    let g = growth_integrals(model, p_star, &num.quadrature)?;
    let grid = num.size_grid(model.m())?;
    let sv = survival_samples(model, p_star, grid.cells())?;
    Ok(sv.pi.iter().map(|pi| p_star * pi / g.int_pi).collect())
}

/// `R(P)` as a size integral and as an age integral along `ds/da = gamma`.
///
/// The size-age map is integrated with classical RK4 (together with the
/// cumulative mortality and the reproduction integral); the last step is
/// shortened by bisection so that it lands on `s = m`.
pub fn age_form_crosscheck(model: &ModelIngredients, p: f64, q: &Quadrature) -> Result<(f64, f64)> {
    let size_form = net_reproduction(model, p, q)?;
    let m = model.m();
    let steps = q.panel_count();
    let gamma0 = model.gamma_checked(0.0, p)?;
    let da = m / (gamma0 * steps as f64);
    let rhs = |y: [f64; 3]| -> Result<[f64; 3]> {
        let s = y[0].min(m);
        let g = model.gamma_checked(s, p)?;
        Ok([g, model.mu(s, p), model.beta(s, p) * (-y[1]).exp()])
    };
    let rk4 = |y: [f64; 3], h: f64| -> Result<[f64; 3]> {
        let k1 = rhs(y)?;
        let k2 = rhs(axpy(y, 0.5 * h, k1))?;
        let k3 = rhs(axpy(y, 0.5 * h, k2))?;
        let k4 = rhs(axpy(y, h, k3))?;
        let mut out = y;
        for i in 0..3 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(out)
    };
    let mut y = [0.0, 0.0, 0.0];
    let max_steps = 1000 * steps;
    for _ in 0..max_steps {
        let next = rk4(y, da)?;
        if next[0] < m {
            y = next;
            continue;
        }
        // land on s = m
        let (mut lo, mut hi) = (0.0, da);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rk4(y, mid)?[0] < m {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * da.max(1.0) {
                break;
            }
        }
        let last = rk4(y, 0.5 * (lo + hi))?;
        return Ok((size_form, last[2]));
    }
    Err(Error::AgeMap(format!(
        "size {m} not reached after {max_steps} steps of da = {da} (growth too slow)"
    )))
}

fn axpy(y: [f64; 3], h: f64, k: [f64; 3]) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}
