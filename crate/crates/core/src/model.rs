//! Vital rates, their partial derivatives, and the built-in example.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse_rate, Expr, Var};
use crate::numerics::{difference_step, second_difference_step};

/// A rate `(s, P) -> value`.
pub type RateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Normalising constant of the built-in fertility, `3e^-2 - 2e^-8 - 13e^-14`.
pub fn example_fertility_scale() -> f64 {
    3.0 * (-2f64).exp() - 2.0 * (-8f64).exp() - 13.0 * (-14f64).exp()
}

/// Inflow of minimal-size individuals.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Inflow(f64);

impl Inflow {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c >= 0.0 {
            Ok(Self(c))
        } else {
            Err(Error::InvalidInflow(c))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Where a model came from; echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSource {
    Example,
    Expressions { beta: String, mu: String, gamma: String },
    Custom { label: String },
}

/// The partial derivatives the linearisation needs.
#[derive(Clone)]
pub struct Partials {
    pub beta_p: RateFn,
    pub beta_pp: RateFn,
    pub mu_p: RateFn,
    pub gamma_p: RateFn,
    pub gamma_s: RateFn,
    pub gamma_sp: RateFn,
}

impl Partials {
    /// Partials synthesised by central differences of the given rates.
    pub fn finite_difference(beta: &RateFn, mu: &RateFn, gamma: &RateFn) -> Self {
        Self {
            beta_p: d_dp(beta),
            beta_pp: d2_dp2(beta),
            mu_p: d_dp(mu),
            gamma_p: d_dp(gamma),
            gamma_s: d_ds(gamma),
            gamma_sp: d2_dsdp(gamma),
        }
    }
}

fn d_dp(f: &RateFn) -> RateFn {
    let f = f.clone();
    Arc::new(move |s, p| {
        let h = difference_step(p);
        (f(s, p + h) - f(s, p - h)) / (2.0 * h)
    })
}

fn d_ds(f: &RateFn) -> RateFn {
    let f = f.clone();
    Arc::new(move |s, p| {
        let h = difference_step(s);
        (f(s + h, p) - f(s - h, p)) / (2.0 * h)
    })
}

fn d2_dp2(f: &RateFn) -> RateFn {
    let f = f.clone();
    Arc::new(move |s, p| {
        let h = second_difference_step(p);
        (f(s, p + h) - 2.0 * f(s, p) + f(s, p - h)) / (h * h)
    })
}

fn d2_dsdp(f: &RateFn) -> RateFn {
    let f = f.clone();
    Arc::new(move |s, p| {
        let hs = second_difference_step(s);
        let hp = second_difference_step(p);
        (f(s + hs, p + hp) - f(s + hs, p - hp) - f(s - hs, p + hp) + f(s - hs, p - hp)) / (4.0 * hs * hp)
    })
}

/// Vital rates of the size-structured model on `[0, m] x [0, inf)`.
#[derive(Clone)]
pub struct ModelIngredients {
    m: f64,
    beta: RateFn,
    mu: RateFn,
    gamma: RateFn,
    partials: Partials,
    analytic: bool,
    p_independent_mu: bool,
    p_independent_gamma: bool,
    source: ModelSource,
}

impl fmt::Debug for ModelIngredients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelIngredients")
            .field("m", &self.m)
            .field("source", &self.source)
            .field("analytic_partials", &self.analytic)
            .finish()
    }
}

fn check_max_size(m: f64) -> Result<()> {
    if m.is_finite() && m > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("maximal size must be finite and positive, got {m}")))
    }
}

impl ModelIngredients {
    /// Model from closures; partials are synthesised by central differences.
    pub fn from_fns(m: f64, beta: RateFn, mu: RateFn, gamma: RateFn, label: &str) -> Result<Self> {
        check_max_size(m)?;
        let partials = Partials::finite_difference(&beta, &mu, &gamma);
        Ok(Self {
            m,
            beta,
            mu,
            gamma,
            partials,
            analytic: false,
            p_independent_mu: false,
            p_independent_gamma: false,
            source: ModelSource::Custom { label: label.to_string() },
        })
    }

    /// Model from expression text over `s` and `P`.
    pub fn from_expressions(m: f64, beta: &str, mu: &str, gamma: &str) -> Result<Self> {
        let (b, u, g) = (parse_rate(beta)?, parse_rate(mu)?, parse_rate(gamma)?);
        Self::from_exprs(m, b, u, g)
    }

    pub fn from_exprs(m: f64, beta: Expr, mu: Expr, gamma: Expr) -> Result<Self> {
        let source = ModelSource::Expressions {
            beta: beta.source().to_string(),
            mu: mu.source().to_string(),
            gamma: gamma.source().to_string(),
        };
        let p_independent_mu = !mu.depends_on(Var::Population);
        let p_independent_gamma = !gamma.depends_on(Var::Population);
        let to_fn = |e: Expr| -> RateFn { Arc::new(move |s, p| e.eval(s, p)) };
        let mut model = Self::from_fns(m, to_fn(beta), to_fn(mu), to_fn(gamma), "")?;
        model.source = source;
        model.p_independent_mu = p_independent_mu;
        model.p_independent_gamma = p_independent_gamma;
        Ok(model)
    }

    /// Replace the partial derivatives with exact ones.
    pub fn with_analytic_partials(mut self, partials: Partials) -> Self {
        self.partials = partials;
        self.analytic = true;
        self
    }

    /// Declare mortality and growth independent of `P`.
    pub fn with_p_independent_mu_gamma(mut self) -> Self {
        self.p_independent_mu = true;
        self.p_independent_gamma = true;
        self
    }

    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn source(&self) -> &ModelSource {
        &self.source
    }
    pub fn has_analytic_partials(&self) -> bool {
        self.analytic
    }
    pub fn partials(&self) -> &Partials {
        &self.partials
    }
    /// True when `mu` and `gamma` are known not to depend on `P`.
    pub fn mu_gamma_p_independent(&self) -> bool {
        self.p_independent_mu && self.p_independent_gamma
    }

    #[inline]
    pub fn beta(&self, s: f64, p: f64) -> f64 {
        (self.beta)(s, p)
    }
    #[inline]
    pub fn mu(&self, s: f64, p: f64) -> f64 {
        (self.mu)(s, p)
    }
    #[inline]
    pub fn gamma(&self, s: f64, p: f64) -> f64 {
        (self.gamma)(s, p)
    }
    #[inline]
    pub fn beta_p(&self, s: f64, p: f64) -> f64 {
        (self.partials.beta_p)(s, p)
    }
    #[inline]
    pub fn beta_pp(&self, s: f64, p: f64) -> f64 {
        (self.partials.beta_pp)(s, p)
    }
    #[inline]
    pub fn mu_p(&self, s: f64, p: f64) -> f64 {
        (self.partials.mu_p)(s, p)
    }
    #[inline]
    pub fn gamma_p(&self, s: f64, p: f64) -> f64 {
        (self.partials.gamma_p)(s, p)
    }
    #[inline]
    pub fn gamma_s(&self, s: f64, p: f64) -> f64 {
        (self.partials.gamma_s)(s, p)
    }
    #[inline]
    pub fn gamma_sp(&self, s: f64, p: f64) -> f64 {
        (self.partials.gamma_sp)(s, p)
    }

    /// `gamma(s, p)`, or an error when it is not strictly positive.
    pub fn gamma_checked(&self, s: f64, p: f64) -> Result<f64> {
        let g = self.gamma(s, p);
        if g > 0.0 && g.is_finite() {
            Ok(g)
        } else {
            Err(Error::GammaNonPositive { s, p, value: g })
        }
    }

    /// Rates printed as they would appear in a config file.
    pub fn rate_strings(&self) -> Option<(String, String, String)> {
        match &self.source {
            ModelSource::Expressions { beta, mu, gamma } => Some((beta.clone(), mu.clone(), gamma.clone())),
            ModelSource::Example => Some((
                format!("(P^2*exp(-P)*s*exp(-s)+0.5*P^2*exp(-P))/{}", example_fertility_scale()),
                "1".into(),
                "1".into(),
            )),
            ModelSource::Custom { .. } => None,
        }
    }
}

/// Mortality 1, growth 1, `m = 6`, and the Allee-type fertility
/// `(P^2 e^-P s e^-s + 0.5 P^2 e^-P) / (3e^-2 - 2e^-8 - 13e^-14)`,
/// with every partial derivative in closed form.
pub fn builtin_example() -> ModelIngredients {
    let k = 1.0 / example_fertility_scale();
    // beta = k * g(P) * w(s), g = P^2 e^-P, w = s e^-s + 1/2
    let w = |s: f64| s * (-s).exp() + 0.5;
    let beta: RateFn = Arc::new(move |s, p| k * p * p * (-p).exp() * w(s));
    let beta_p: RateFn = Arc::new(move |s, p| k * (2.0 * p - p * p) * (-p).exp() * w(s));
    let beta_pp: RateFn = Arc::new(move |s, p| k * (2.0 - 4.0 * p + p * p) * (-p).exp() * w(s));
    let one: RateFn = Arc::new(|_, _| 1.0);
    let zero: RateFn = Arc::new(|_, _| 0.0);
    ModelIngredients {
        m: 6.0,
        beta,
        mu: one.clone(),
        gamma: one,
        partials: Partials {
            beta_p,
            beta_pp,
            mu_p: zero.clone(),
            gamma_p: zero.clone(),
            gamma_s: zero.clone(),
            gamma_sp: zero,
        },
        analytic: true,
        p_independent_mu: true,
        p_independent_gamma: true,
        source: ModelSource::Example,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    GammaNonPositive,
    BetaNegative,
    MuNegative,
    NonFinite,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::GammaNonPositive => "gamma <= 0",
            ViolationKind::BetaNegative => "beta < 0",
            ViolationKind::MuNegative => "mu < 0",
            ViolationKind::NonFinite => "non-finite rate",
        })
    }
}

/// One kind of violation, summarised by its worst sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub count: usize,
    pub s: f64,
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn find(&self, kind: ViolationKind) -> Option<&Violation> {
        self.violations.iter().find(|v| v.kind == kind)
    }
}

/// Sample the rates on a 200 x 200 lattice over `[0, m] x [0, p_max]`.
pub fn validate(model: &ModelIngredients, p_max: f64) -> ValidationReport {
    validate_on_lattice(model, p_max, 200)
}

pub fn validate_on_lattice(model: &ModelIngredients, p_max: f64, points: usize) -> ValidationReport {
    let points = points.max(2);
    let mut found: Vec<Violation> = Vec::new();
    let mut record = |kind: ViolationKind, s: f64, p: f64, value: f64, worse: &dyn Fn(f64, f64) -> bool| {
        match found.iter_mut().find(|v| v.kind == kind) {
            Some(v) => {
                v.count += 1;
                if worse(value, v.value) {
                    v.s = s;
                    v.p = p;
                    v.value = value;
                }
            }
            None => found.push(Violation { kind, count: 1, s, p, value }),
        }
    };
    let lower = |a: f64, b: f64| a < b;
    let nan_first = |a: f64, b: f64| a.is_nan() && !b.is_nan();
    for i in 0..points {
        let s = model.m() * i as f64 / (points - 1) as f64;
        for j in 0..points {
            let p = p_max * j as f64 / (points - 1) as f64;
            let (b, u, g) = (model.beta(s, p), model.mu(s, p), model.gamma(s, p));
            for v in [b, u, g] {
                if !v.is_finite() {
                    record(ViolationKind::NonFinite, s, p, v, &nan_first);
                }
            }
            if g <= 0.0 {
                record(ViolationKind::GammaNonPositive, s, p, g, &lower);
            }
            if b < 0.0 {
                record(ViolationKind::BetaNegative, s, p, b, &lower);
            }
            if u < 0.0 {
                record(ViolationKind::MuNegative, s, p, u, &lower);
            }
        }
    }
    ValidationReport {
        samples: points * points,
        violations: found,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_as_expressions() -> ModelIngredients {
        let beta = format!("(P^2*exp(-P)*s*exp(-s)+0.5*P^2*exp(-P))/{}", example_fertility_scale());
        ModelIngredients::from_expressions(6.0, &beta, "1", "1").unwrap()
    }

    #[test]
    fn example_rates() {
        let m = builtin_example();
        let expected = 4.0 * (-2f64).exp() * 0.5 / example_fertility_scale();
        assert!((m.beta(0.0, 2.0) - expected).abs() < 1e-15);
        assert!((m.beta(0.0, 2.0) - 0.667_788).abs() < 1e-6);
        assert_eq!(m.gamma(3.0, 7.0), 1.0);
        assert_eq!(m.mu(3.0, 7.0), 1.0);
        for i in 0..=60 {
            assert_eq!(m.beta_p(i as f64 * 0.1, 2.0), 0.0);
        }
    }

    #[test]
    fn expression_partials_match_analytic() {
        let analytic = builtin_example();
        let fd = example_as_expressions();
        assert!(!fd.has_analytic_partials());
        assert!(fd.mu_gamma_p_independent());
        let close = |a: f64, b: f64| b.abs() <= 1e-8 || (a - b).abs() <= 1e-5 * b.abs();
        for i in 0..=12 {
            let s = 0.5 * i as f64;
            for p in [0.3, 1.0, 1.7, 2.5, 4.0, 9.0] {
                assert!(close(fd.beta(s, p), analytic.beta(s, p)));
                assert!(close(fd.beta_p(s, p), analytic.beta_p(s, p)), "beta_p at {s},{p}");
                assert!(close(fd.beta_pp(s, p), analytic.beta_pp(s, p)), "beta_pp at {s},{p}");
                assert_eq!(fd.mu_p(s, p), 0.0);
                assert_eq!(fd.gamma_p(s, p), 0.0);
                assert_eq!(fd.gamma_s(s, p), 0.0);
                assert_eq!(fd.gamma_sp(s, p), 0.0);
            }
        }
    }

    #[test]
    fn mixed_partial_of_growth() {
        let m = ModelIngredients::from_expressions(4.0, "1", "0.1", "1+0.2*s*P+0.1*s^2").unwrap();
        assert!((m.gamma_sp(1.0, 2.0) - 0.2).abs() < 1e-7);
        assert!((m.gamma_s(1.0, 2.0) - 0.6).abs() < 1e-7);
        assert!((m.gamma_p(3.0, 2.0) - 0.6).abs() < 1e-7);
        assert!(!m.mu_gamma_p_independent());
    }

    #[test]
    fn validation_of_example() {
        assert!(validate(&builtin_example(), 10.0).is_valid());
    }

    #[test]
    fn validation_flags_shrinking_growth() {
        let m = ModelIngredients::from_expressions(6.0, "1", "1", "s-3").unwrap();
        let report = validate(&m, 10.0);
        let v = report.find(ViolationKind::GammaNonPositive).expect("gamma violation");
        assert!(v.s <= 3.0 + 1e-12);
        assert!(v.value <= 0.0);
        assert!(v.count > 0);
        assert_eq!(v.kind.to_string(), "gamma <= 0");
    }

    #[test]
    fn validation_flags_negative_fertility_everywhere() {
        let m = ModelIngredients::from_expressions(6.0, "-1", "1", "1").unwrap();
        let report = validate(&m, 10.0);
        let v = report.find(ViolationKind::BetaNegative).unwrap();
        assert_eq!(v.count, report.samples);
        assert_eq!(v.kind.to_string(), "beta < 0");
    }

    #[test]
    fn invalid_max_size() {
        assert!(ModelIngredients::from_expressions(f64::INFINITY, "1", "1", "1").is_err());
        assert!(ModelIngredients::from_expressions(0.0, "1", "1", "1").is_err());
    }

    #[test]
    fn inflow_bounds() {
        assert!(Inflow::new(-0.1).is_err());
        assert!(Inflow::new(f64::NAN).is_err());
        assert_eq!(Inflow::new(0.2).unwrap().value(), 0.2);
    }
}
