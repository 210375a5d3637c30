//! Linearisation at a positive equilibrium, the characteristic function
//! `K(lambda)`, positivity conditions, and linear stability classification.
//!
//! The linearised operator is `u -> -(gamma u)_s - mu u + rho* ∫u` with the
//! boundary functional `u(0) = ∫ b u`, where
//!
//! ```text
//! rho*(s) = -(gamma_sP p* + mu_P p* + gamma_P p*')
//! b(s)    = [beta - gamma_P(0) p*(0) + ∫ beta_P p*] / gamma(0)
//! ```
//!
//! Real eigenvalues are the roots of `K(lambda) = 1`.

use serde::Serialize;

use crate::config::Numerics;
use crate::equilibrium::{net_reproduction_derivative, survival_samples, EquilibriumPoint};
use crate::error::{Error, Result};
use crate::model::ModelIngredients;
use crate::numerics::{cumulative_integral, find_roots, simpson_samples};

/// Threshold on `|R''(P*)|` below which the marginal analysis gives up.
pub const DEGENERATE_CURVATURE: f64 = 1e-9;

/// Linearisation kernels sampled on the quadrature grid (`panels + 1` nodes).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearisationData {
    pub p_star: f64,
    pub c: f64,
    /// `Q'_C(P*)` as computed by the equilibrium search.
    pub dq: f64,
    pub h: f64,
    pub nodes: Vec<f64>,
    pub gamma: Vec<f64>,
    pub profile: Vec<f64>,
    pub p_star_prime: Vec<f64>,
    pub rho_star: Vec<f64>,
    pub b: Vec<f64>,
    /// `∫_0^s 1/gamma`, the time to grow from 0 to `s`.
    #[serde(skip)]
    transit: Vec<f64>,
    /// `∫_0^s (gamma_s + mu)/gamma = -ln pi(s, P*)`.
    #[serde(skip)]
    log_decay: Vec<f64>,
    /// `-∫_0^s [(gamma_sP + mu_P)/gamma - gamma_P (gamma_s + mu)/gamma^2]`, i.e. `pi_P / pi`.
    #[serde(skip)]
    survival_sensitivity: Vec<f64>,
}

/// Build the linearisation kernels at `eq`.
pub fn linearise(model: &ModelIngredients, eq: &EquilibriumPoint, num: &Numerics) -> Result<LinearisationData> {
    let p = eq.p_star;
    let panels = num.quadrature.panel_count();
    let sv = survival_samples(model, p, panels)?;
    let h = sv.h;
    let n = sv.nodes.len();
    let p0 = p / simpson_samples(&sv.pi, h);

    let mut inv_gamma = Vec::with_capacity(n);
    let mut decay_rate = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut profile = Vec::with_capacity(n);
    let mut prime = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    let mut beta_p_p = Vec::with_capacity(n);
    for (j, &s) in sv.nodes.iter().enumerate() {
        let g = sv.gamma[j];
        let rate = (model.gamma_s(s, p) + model.mu(s, p)) / g;
        let ps = p0 * sv.pi[j];
        let dps = -ps * rate;
        inv_gamma.push(1.0 / g);
        decay_rate.push(rate);
        w.push((model.gamma_sp(s, p) + model.mu_p(s, p)) / g - model.gamma_p(s, p) * rate / g);
        rho.push(-((model.gamma_sp(s, p) + model.mu_p(s, p)) * ps + model.gamma_p(s, p) * dps));
        beta_p_p.push(model.beta_p(s, p) * ps);
        profile.push(ps);
        prime.push(dps);
    }
    let shift = simpson_samples(&beta_p_p, h) - model.gamma_p(0.0, p) * p0;
    let gamma0 = sv.gamma[0];
    let b: Vec<f64> = sv.nodes.iter().map(|&s| (model.beta(s, p) + shift) / gamma0).collect();
    if let Some(j) = b.iter().chain(&rho).position(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("non-finite linearisation kernel at node {}", j % n)));
    }
    Ok(LinearisationData {
        p_star: p,
        c: eq.c,
        dq: eq.dq,
        h,
        transit: cumulative_integral(&inv_gamma, h),
        log_decay: cumulative_integral(&decay_rate, h),
        survival_sensitivity: cumulative_integral(&w, h).into_iter().map(|v| -v).collect(),
        nodes: sv.nodes,
        gamma: sv.gamma,
        profile,
        p_star_prime: prime,
        rho_star: rho,
        b,
    })
}

impl LinearisationData {
    /// True when the bulk kernel vanishes identically.
    pub fn rho_vanishes(&self) -> bool {
        self.rho_star.iter().all(|&r| r == 0.0)
    }

    /// `K(lambda)`.
    pub fn characteristic(&self, lambda: f64) -> Result<f64> {
        let n = self.nodes.len();
        let h = self.h;
        let log_f: Vec<f64> = self.transit.iter().zip(&self.log_decay).map(|(a, e)| -(lambda * a + e)).collect();
        let f: Vec<f64> = log_f.iter().map(|l| l.exp()).collect();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::CharacteristicOverflow(lambda));
        }
        let fb: Vec<f64> = f.iter().zip(&self.b).map(|(f, b)| f * b).collect();
        let s1 = simpson_samples(&fb, h);
        if self.rho_vanishes() {
            return finite_k(s1, lambda);
        }
        let g: Vec<f64> = self.rho_star.iter().zip(&self.gamma).map(|(r, g)| r / g).collect();
        let fi = scaled_cumulative(&log_f, &g, h);
        let fbi: Vec<f64> = (0..n).map(|j| fi[j] * self.b[j]).collect();
        let s2 = simpson_samples(&fi, h);
        let s3 = simpson_samples(&f, h);
        let s4 = simpson_samples(&fbi, h);
        finite_k(s1 * (1.0 - s2) + s2 + s3 * s4, lambda)
    }
}

fn finite_k(k: f64, lambda: f64) -> Result<f64> {
    if k.is_finite() {
        Ok(k)
    } else {
        Err(Error::CharacteristicOverflow(lambda))
    }
}

/// `f(s) ∫_0^s g / f` for `f = exp(log_f)`, with the same node rules as
/// [`cumulative_integral`] but carried forward through ratios of `f` so that
/// `1/f` is never formed.
fn scaled_cumulative(log_f: &[f64], g: &[f64], h: f64) -> Vec<f64> {
    let n = g.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    // ratio(a, b) = f_a / f_b
    let ratio = |a: usize, b: usize| (log_f[a] - log_f[b]).exp();
    if n == 2 {
        out[1] = 0.5 * h * (ratio(1, 0) * g[0] + g[1]);
        return out;
    }
    let mut j = 0;
    while j + 2 < n {
        let (r10, r20, r21, r12) = (ratio(j + 1, j), ratio(j + 2, j), ratio(j + 2, j + 1), ratio(j + 1, j + 2));
        out[j + 1] = r10 * out[j] + h / 12.0 * (5.0 * r10 * g[j] + 8.0 * g[j + 1] - r12 * g[j + 2]);
        out[j + 2] = r20 * out[j] + h / 3.0 * (r20 * g[j] + 4.0 * r21 * g[j + 1] + g[j + 2]);
        j += 2;
    }
    if j + 1 < n {
        let (r1m, r10) = (ratio(j + 1, j - 1), ratio(j + 1, j));
        out[j + 1] = r10 * out[j] + h / 12.0 * (-r1m * g[j - 1] + 8.0 * r10 * g[j] + 5.0 * g[j + 1]);
    }
    out
}

/// `K(lambda)` at an equilibrium.
pub fn characteristic_k(model: &ModelIngredients, eq: &EquilibriumPoint, lambda: f64, num: &Numerics) -> Result<f64> {
    linearise(model, eq, num)?.characteristic(lambda)
}

/// Positivity conditions of the linearised semigroup, with their margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Positivity {
    pub poscond1: bool,
    pub poscond2: bool,
    pub posstrict3: bool,
    /// `min_s [beta - gamma_P(0) p*(0) + ∫ beta_P p*]`.
    pub margin1: f64,
    /// `min_s rho*(s)`.
    pub margin2: f64,
    /// Left side of the third condition plus one.
    pub margin3: f64,
}

pub fn check_positivity(lin: &LinearisationData) -> Positivity {
    let gamma0 = lin.gamma[0];
    let margin1 = lin.b.iter().map(|b| b * gamma0).fold(f64::INFINITY, f64::min);
    let margin2 = lin.rho_star.iter().copied().fold(f64::INFINITY, f64::min);
    let weighted: Vec<f64> = lin.profile.iter().zip(&lin.survival_sensitivity).map(|(p, w)| -p * w).collect();
    let margin3 = simpson_samples(&weighted, lin.h) + 1.0;
    Positivity {
        poscond1: margin1 >= 0.0,
        poscond2: margin2 >= 0.0,
        posstrict3: margin3 >= 0.0,
        margin1,
        margin2,
        margin3,
    }
}

/// Largest real root of `K(lambda) = 1` in `num.lambda_window`, if any.
pub fn dominant_real_eigenvalue(lin: &LinearisationData, num: &Numerics) -> Result<Option<f64>> {
    let (lo, hi) = num.lambda_window;
    let roots = find_roots(|l| lin.characteristic(l).map(|k| k - 1.0).unwrap_or(f64::NAN), lo, hi, &num.roots)?;
    Ok(roots.iter().map(|r| r.x).reduce(f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    LinearlyStable,
    LinearlyUnstable,
    MarginalZeroEigenvalue,
    IndeterminatePositivityFails,
}

impl Classification {
    pub fn from_dq(dq: f64, positivity: &Positivity, tol_margin: f64) -> Self {
        if dq > tol_margin {
            Classification::LinearlyUnstable
        } else if dq >= -tol_margin {
            Classification::MarginalZeroEigenvalue
        } else if positivity.poscond1 && positivity.poscond2 && positivity.posstrict3 {
            Classification::LinearlyStable
        } else {
            Classification::IndeterminatePositivityFails
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::LinearlyStable => "linearly stable",
            Classification::LinearlyUnstable => "linearly unstable",
            Classification::MarginalZeroEigenvalue => "marginal (zero eigenvalue)",
            Classification::IndeterminatePositivityFails => "indeterminate (positivity fails)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub p_star: f64,
    pub c: f64,
    pub cond_poscond1: bool,
    pub cond_poscond2: bool,
    pub cond_posstrict3: bool,
    pub positivity: Positivity,
    pub k0: f64,
    pub dq: f64,
    pub dominant_real_eigenvalue: Option<f64>,
    pub classification: Classification,
}

/// Classify an equilibrium; `scan_eigenvalue = false` skips the `K = 1` root scan.
pub fn classify(
    model: &ModelIngredients,
    eq: &EquilibriumPoint,
    num: &Numerics,
    scan_eigenvalue: bool,
) -> Result<StabilityReport> {
    let lin = linearise(model, eq, num)?;
    classify_linearised(&lin, num, scan_eigenvalue)
}

pub fn classify_linearised(lin: &LinearisationData, num: &Numerics, scan_eigenvalue: bool) -> Result<StabilityReport> {
    let positivity = check_positivity(lin);
    let dominant = if scan_eigenvalue { dominant_real_eigenvalue(lin, num)? } else { None };
    Ok(StabilityReport {
        p_star: lin.p_star,
        c: lin.c,
        cond_poscond1: positivity.poscond1,
        cond_poscond2: positivity.poscond2,
        cond_posstrict3: positivity.posstrict3,
        positivity,
        k0: lin.characteristic(0.0)?,
        dq: lin.dq,
        dominant_real_eigenvalue: dominant,
        classification: Classification::from_dq(lin.dq, &positivity, num.tol_margin),
    })
}

/// Spanning function of the kernel of the linearised operator, sampled on the
/// size grid of `eq` and scaled to unit L1 norm.
///
/// Meaningful only at a marginal equilibrium; elsewhere it is computed
/// formally and a warning is logged.
pub fn center_eigenfunction(model: &ModelIngredients, eq: &EquilibriumPoint, num: &Numerics) -> Result<Vec<f64>> {
    if eq.dq.abs() > num.tol_margin {
        log::warn!("centre eigenfunction requested off the marginal case (Q' = {:e})", eq.dq);
    }
    let k = kernel_samples(model, eq)?;
    let j_cum = cumulative_integral(
        &(0..k.f.len()).map(|i| -k.rho[i] / (k.gamma[i] * k.f[i])).collect::<Vec<_>>(),
        k.h,
    );
    let fj: Vec<f64> = k.f.iter().zip(&j_cum).map(|(f, j)| f * j).collect();
    let int_f = simpson_samples(&k.f, k.h);
    let u0 = (1.0 + simpson_samples(&fj, k.h)) / int_f;
    let u: Vec<f64> = k.f.iter().zip(&j_cum).map(|(f, j)| f * (u0 - j)).collect();
    let norm = simpson_samples(&u.iter().map(|v| v.abs()).collect::<Vec<_>>(), k.h);
    Ok(u.into_iter().map(|v| v / norm).collect())
}

/// L1 defect of `u` in the zero-eigenvalue relation: `u` is rebuilt from its
/// own boundary value `∫ b u` and mass `∫ u` along `f(0, s)` and compared to itself.
pub fn eigen_relation_residual(model: &ModelIngredients, eq: &EquilibriumPoint, u: &[f64]) -> Result<f64> {
    let k = kernel_samples(model, eq)?;
    if u.len() != k.f.len() {
        return Err(Error::InvalidConfig(format!(
            "eigenfunction has {} samples, grid has {}",
            u.len(),
            k.f.len()
        )));
    }
    let mass = simpson_samples(u, k.h);
    let bu: Vec<f64> = k.b.iter().zip(u).map(|(b, u)| b * u).collect();
    let boundary = simpson_samples(&bu, k.h);
    let i_cum = cumulative_integral(
        &(0..k.f.len()).map(|i| k.rho[i] / (k.gamma[i] * k.f[i])).collect::<Vec<_>>(),
        k.h,
    );
    let defect: Vec<f64> = (0..u.len()).map(|i| (u[i] - k.f[i] * (boundary + mass * i_cum[i])).abs()).collect();
    Ok(simpson_samples(&defect, k.h))
}

struct KernelSamples {
    h: f64,
    f: Vec<f64>,
    gamma: Vec<f64>,
    rho: Vec<f64>,
    b: Vec<f64>,
}

/// `f(0, s) = pi(s, P*)`, `gamma`, `rho*` and `b` on the size grid of `eq`.
fn kernel_samples(model: &ModelIngredients, eq: &EquilibriumPoint) -> Result<KernelSamples> {
    let p = eq.p_star;
    let sv = survival_samples(model, p, eq.grid.cells())?;
    let mut rho = Vec::with_capacity(sv.nodes.len());
    let mut beta_p_p = Vec::with_capacity(sv.nodes.len());
    for (j, &s) in sv.nodes.iter().enumerate() {
        let ps = eq.p0 * sv.pi[j];
        let dps = -ps * (model.gamma_s(s, p) + model.mu(s, p)) / sv.gamma[j];
        rho.push(-((model.gamma_sp(s, p) + model.mu_p(s, p)) * ps + model.gamma_p(s, p) * dps));
        beta_p_p.push(model.beta_p(s, p) * ps);
    }
    let shift = simpson_samples(&beta_p_p, sv.h) - model.gamma_p(0.0, p) * eq.p0;
    let b = sv.nodes.iter().map(|&s| (model.beta(s, p) + shift) / sv.gamma[0]).collect();
    Ok(KernelSamples { h: sv.h, f: sv.pi, gamma: sv.gamma, rho, b })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalDiagnosis {
    /// `R''(P*) = ∫ beta_PP pi / gamma(0)`.
    pub rpp: f64,
    /// `∫ beta_PP p*`, the coefficient of the squared mass in the boundary condition.
    pub curvature_mass: f64,
    /// `∫ beta F ∫_0^s 1/F`, the coefficient of the forcing.
    pub forcing_weight: f64,
    /// Sign of the forcing for which the quadratic problem has real solutions.
    pub one_sided_sign: Option<i8>,
    pub verdict: String,
}

/// Second-order analysis at a zero eigenvalue, for models whose mortality and
/// growth do not depend on `P`.
pub fn marginal_diagnosis(model: &ModelIngredients, eq: &EquilibriumPoint, num: &Numerics) -> Result<MarginalDiagnosis> {
    if !model.mu_gamma_p_independent() {
        return Err(Error::Unsupported(
            "marginal diagnosis needs mu and gamma independent of P".into(),
        ));
    }
    let p = eq.p_star;
    let rp = net_reproduction_derivative(model, p, &num.quadrature)?;
    if rp.abs() > num.tol_margin {
        return Err(Error::Unsupported(format!("R'(P*) = {rp:e} is not zero within {:e}", num.tol_margin)));
    }
    let sv = survival_samples(model, p, num.quadrature.panel_count())?;
    let h = sv.h;
    let p0 = p / simpson_samples(&sv.pi, h);
    let bpp_pi: Vec<f64> = sv.nodes.iter().zip(&sv.pi).map(|(&s, pi)| model.beta_pp(s, p) * pi).collect();
    let int_bpp_pi = simpson_samples(&bpp_pi, h);
    let rpp = int_bpp_pi / sv.gamma[0];
    let curvature_mass = p0 * int_bpp_pi;
    let inv_f = cumulative_integral(&sv.pi.iter().map(|f| 1.0 / f).collect::<Vec<_>>(), h);
    let forcing: Vec<f64> = (0..sv.nodes.len()).map(|j| model.beta(sv.nodes[j], p) * sv.pi[j] * inv_f[j]).collect();
    let forcing_weight = simpson_samples(&forcing, h);
    let (one_sided_sign, verdict) = if rpp.abs() <= DEGENERATE_CURVATURE {
        (None, "inconclusive (degenerate)")
    } else {
        let s = -(forcing_weight * curvature_mass).signum();
        (Some(s as i8), "nonlinearly unstable")
    };
    Ok(MarginalDiagnosis { rpp, curvature_mass, forcing_weight, one_sided_sign, verdict: verdict.to_string() })
}
