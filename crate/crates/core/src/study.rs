//! The full analysis of the built-in example with every headline number
//! checked against closed forms or independent computations.
//!
//! [`run_study`] is what the `reproduce` command executes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bifurcation::{locate_fold, sweep, BifurcationDiagram, Fold};
use crate::config::Numerics;
use crate::equilibrium::{
    age_form_crosscheck, expected_lifetime, find_equilibria, net_growth, net_reproduction, survival_pi,
    EquilibriumPoint,
};
use crate::error::Result;
use crate::model::{builtin_example, ModelIngredients};
use crate::simulator::{simulate, SimulationConfig, SimulationState, Trajectory};
use crate::spectral::{
    check_positivity, classify_linearised, linearise, marginal_diagnosis, Classification,
    MarginalDiagnosis, StabilityReport,
};

/// Closed forms for the built-in example (`mu = gamma = 1`, `m = 6`).
pub mod reference {
    /// `L = 1 - e^-6`.
    pub fn lifetime() -> f64 {
        1.0 - (-6f64).exp()
    }

    /// `R(P) = P^2 e^(2-P) / 4`.
    pub fn net_reproduction(p: f64) -> f64 {
        p * p * (2.0 - p).exp() / 4.0
    }

    pub fn net_growth(c: f64, p: f64) -> f64 {
        net_reproduction(p) + c * lifetime() / p
    }

    /// `p*(s) = 2 e^-s / (1 - e^-6)` at `C = 0`.
    pub fn marginal_profile(s: f64) -> f64 {
        2.0 * (-s).exp() / lifetime()
    }

    /// Interior fold `(C*, P_fold)`: `P^2 (3 - P) e^(2-P) = 4` on `(0, 2)`, then
    /// `C* = P^3 (2 - P) e^(2-P) / (4 L)`.
    pub fn fold() -> (f64, f64) {
        let h = |p: f64| p * p * (3.0 - p) * (2.0 - p).exp() - 4.0;
        let (mut a, mut b) = (0.1, 1.5);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if h(a).signum() == h(mid).signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        let p = 0.5 * (a + b);
        (p.powi(3) * (2.0 - p) * (2.0 - p).exp() / (4.0 * lifetime()), p)
    }

    /// Roots of `Q_C(P) = 1` by a uniform scan of `points` nodes on `[lo, hi]`
    /// followed by bisection.
    pub fn dense_scan_roots(c: f64, lo: f64, hi: f64, points: usize) -> Vec<f64> {
        let g = |p: f64| net_growth(c, p) - 1.0;
        let dx = (hi - lo) / (points - 1) as f64;
        let mut roots = Vec::new();
        let mut prev = (lo, g(lo));
        for i in 1..points {
            let x = lo + i as f64 * dx;
            let v = g(x);
            if v.signum() != prev.1.signum() {
                let (mut a, mut b, ga) = (prev.0, x, prev.1);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    if g(mid).signum() == ga.signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev = (x, v);
        }
        roots
    }
}

/// Random smooth models for property checks.
///
/// `beta = a P e^(-b P) (1 + c s) e^(-d s)`, `mu = u0 + u1 P / (1 + P) + u2 s`,
/// and `gamma = (g0 + g1 s)`, divided by `1 + g2 P` unless `p_independent_gamma`.
pub fn random_models(seed: u64, count: usize, p_independent_gamma: bool) -> Vec<ModelIngredients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| RandomRates::draw(&mut rng, p_independent_gamma).build(1.0).expect("generated expressions parse"))
        .collect()
}

struct RandomRates {
    m: f64,
    fertility: f64,
    beta_shape: String,
    mu: String,
    gamma: String,
}

impl RandomRates {
    fn draw(rng: &mut ChaCha8Rng, p_independent_gamma: bool) -> Self {
        let m = rng.gen_range(3.0..8.0);
        let fertility = rng.gen_range(0.5..4.0);
        let beta_shape = format!(
            "P*exp(-{:.6}*P)*(1+{:.6}*s)*exp(-{:.6}*s)",
            rng.gen_range(0.2..1.5),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.1..1.0)
        );
        let mu = format!(
            "{:.6}+{:.6}*P/(1+P)+{:.6}*s",
            rng.gen_range(0.2..1.5),
            rng.gen_range(0.0..0.8),
            rng.gen_range(0.0..0.2)
        );
        let (g0, g1, g2): (f64, f64, f64) = (rng.gen_range(0.5..2.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
        let gamma = if p_independent_gamma {
            format!("{g0:.6}+{g1:.6}*s")
        } else {
            format!("({g0:.6}+{g1:.6}*s)/(1+{g2:.6}*P)")
        };
        Self { m, fertility, beta_shape, mu, gamma }
    }

    fn build(&self, scale: f64) -> Result<ModelIngredients> {
        let beta = format!("{:e}*{}", self.fertility * scale, self.beta_shape);
        ModelIngredients::from_expressions(self.m, &beta, &self.mu, &self.gamma)
    }
}

/// Random models with P-independent growth, each with an equilibrium placed at
/// a random `P* in [0.5, 3]`: fertility is rescaled so that `R(P*) = r` for a
/// random `r in [0.2, 0.8]` and the inflow is `C = (1 - r) P* / L(P*)`.
pub fn random_equilibria(
    seed: u64,
    count: usize,
    num: &Numerics,
) -> Result<Vec<(ModelIngredients, EquilibriumPoint)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = &num.quadrature;
    (0..count)
        .map(|_| {
            let rates = RandomRates::draw(&mut rng, true);
            let p_star = rng.gen_range(0.5..3.0);
            let r = rng.gen_range(0.2..0.8);
            let raw = rates.build(1.0)?;
            let model = rates.build(r / net_reproduction(&raw, p_star, q)?)?;
            let c = (1.0 - r) * p_star / expected_lifetime(&model, p_star, q)?;
            let eq = EquilibriumPoint::at(&model, c, p_star, false, num)?;
            Ok((model, eq))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    /// Cell count for profiles and the scenario simulations.
    pub cells: usize,
    pub cfl: f64,
    pub numerics: Numerics,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { cells: 1024, cfl: 0.9, numerics: Numerics::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub passed: bool,
    /// One line per sub-check with the measured value and its bound.
    pub checks: Vec<String>,
}

struct Checks {
    ok: bool,
    lines: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self { ok: true, lines: Vec::new() }
    }

    fn require(&mut self, ok: bool, line: String) {
        self.ok &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn bound(&mut self, what: &str, value: f64, limit: f64) {
        self.require(value <= limit, format!("{what} = {value:.3e} <= {limit:.0e}"));
    }

    fn finish(self, id: u32, title: &str) -> CriterionResult {
        CriterionResult { id, title: title.to_string(), passed: self.ok, checks: self.lines }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub c: f64,
    pub cells: usize,
    pub t_final: f64,
    pub initial_total: f64,
    pub final_total: f64,
    pub min_density: f64,
    pub max_balance_residual: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub criteria: Vec<CriterionResult>,
    pub stability_c0: Vec<StabilityReport>,
    pub stability_c02: Vec<StabilityReport>,
    pub marginal: Option<MarginalDiagnosis>,
    pub fold: Option<Fold>,
    pub diagram: BifurcationDiagram,
    pub scenarios: Vec<ScenarioSummary>,
}

impl StudyReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

fn scenario(
    model: &ModelIngredients,
    name: &str,
    c: f64,
    cells: usize,
    t_final: f64,
    cfl: f64,
    initial: SimulationState,
) -> Result<ScenarioSummary> {
    let mut cfg = SimulationConfig::new(c, cells, t_final);
    cfg.cfl = cfl;
    cfg.output_every = 0.5;
    let initial_total = initial.p_total;
    let tr = simulate(model, &cfg, initial)?;
    Ok(ScenarioSummary {
        name: name.to_string(),
        c,
        cells,
        t_final,
        initial_total,
        final_total: tr.final_total(),
        min_density: tr.min_density,
        max_balance_residual: tr.max_balance_residual(),
        trajectory: tr,
    })
}

/// Run the whole study. Errors are only returned for failures that make the
/// study meaningless (invalid options); numerical shortfalls show up as
/// failed criteria.
pub fn run_study(opts: &StudyOptions) -> Result<StudyReport> {
    opts.numerics.validate()?;
    let num = &opts.numerics;
    let q = &num.quadrature;
    let model = builtin_example();
    let mut criteria = Vec::new();

    // 1. the marginal equilibrium
    let set0 = find_equilibria(&model, 0.0, num)?;
    {
        let mut ck = Checks::new();
        ck.require(set0.points.len() == 1, format!("{} positive equilibria at C = 0 (expected 1)", set0.points.len()));
        if let Some(eq) = set0.points.first() {
            ck.require(eq.tangent, format!("tangent flag = {}", eq.tangent));
            ck.bound("|P* - 2|", (eq.p_star - 2.0).abs(), 1e-8);
            let dev = eq
                .grid
                .nodes()
                .iter()
                .zip(&eq.profile)
                .map(|(&s, p)| (p - reference::marginal_profile(s)).abs())
                .fold(0.0, f64::max);
            ck.bound("max |p*(s) - 2e^-s/(1-e^-6)|", dev, 1e-8);
        }
        criteria.push(ck.finish(1, "example equilibrium at C = 0"));
    }

    // 2. net reproduction against its closed form
    {
        let mut ck = Checks::new();
        for p in [0.5, 1.0, 2.0, 3.0, 5.0] {
            let r = net_reproduction(&model, p, q)?;
            ck.bound(&format!("|R({p}) - P^2 e^(2-P)/4|"), (r - reference::net_reproduction(p)).abs(), 1e-8);
        }
        criteria.push(ck.finish(2, "closed-form net reproduction"));
    }

    // 3. K(0) = P* Q'(P*) + 1
    let mut battery: Vec<(ModelIngredients, EquilibriumPoint)> = Vec::new();
    let mut stability_c0 = Vec::new();
    let mut stability_c02 = Vec::new();
    {
        let mut ck = Checks::new();
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for c in [0.0, 0.05, 0.1, 0.2, 0.3] {
            for eq in find_equilibria(&model, c, num)?.points {
                battery.push((model.clone(), eq));
            }
        }
        let example_count = battery.len();
        battery.extend(random_equilibria(7, 10, num)?);
        for (k, (m, eq)) in battery.iter().enumerate() {
            let lin = linearise(m, eq, num)?;
            let k0 = lin.characteristic(0.0)?;
            let dev = (k0 - (eq.p_star * eq.dq + 1.0)).abs();
            worst = worst.max(dev);
            count += 1;
            if k < example_count && eq.c == 0.0 {
                stability_c0.push(classify_linearised(&lin, num, true)?);
            }
            if k < example_count && eq.c == 0.2 {
                stability_c02.push(classify_linearised(&lin, num, true)?);
            }
        }
        ck.require(
            battery.len() == example_count + 10,
            format!("{example_count} example equilibria and {} random models", battery.len() - example_count),
        );
        ck.bound(&format!("max |K(0) - (P* Q' + 1)| over {count} equilibria"), worst, 1e-6);
        criteria.push(ck.finish(3, "K(0) identity"));
    }

    // 4. stability pattern at C = 0.2
    {
        let mut ck = Checks::new();
        let kinds: Vec<Classification> = stability_c02.iter().map(|r| r.classification).collect();
        ck.require(
            kinds
                == [Classification::LinearlyStable, Classification::LinearlyUnstable, Classification::LinearlyStable],
            format!("classifications by increasing P*: {:?}", kinds),
        );
        for r in &stability_c02 {
            let coherent = match r.dominant_real_eigenvalue {
                Some(l) => l.signum() == r.dq.signum() && l != 0.0,
                None => r.dq < 0.0,
            };
            ck.require(
                coherent,
                format!("P* = {:.6}: Q' = {:.3e}, dominant real eigenvalue {:?}", r.p_star, r.dq, r.dominant_real_eigenvalue),
            );
        }
        let oracle = reference::dense_scan_roots(0.2, 1e-3, 10.0, 1_000_000);
        let found: Vec<f64> = stability_c02.iter().map(|r| r.p_star).collect();
        ck.require(oracle.len() == found.len(), format!("{} roots found, {} by dense scan", found.len(), oracle.len()));
        let dev = found.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ck.bound("max |P* - dense-scan root|", dev, 1e-8);
        criteria.push(ck.finish(4, "stability pattern at C = 0.2"));
    }

    // 5. fold
    let (fold, diagram) = {
        let mut ck = Checks::new();
        let (c_ref, p_ref) = reference::fold();
        let fold = match locate_fold(&model, 0.1, 1.0, num) {
            Ok(f) => {
                ck.bound("|Q_C*(P_fold) - 1|", f.residual.abs(), 1e-6);
                ck.bound("|Q'_C*(P_fold)|", f.slope.abs(), 1e-5);
                ck.bound("|C* - tangency oracle|", (f.c_star - c_ref).abs(), 1e-5);
                ck.require(true, format!("C* = {:.8}, P_fold = {:.8} (oracle {c_ref:.8}, {p_ref:.8})", f.c_star, f.p_fold));
                Some(f)
            }
            Err(e) => {
                ck.require(false, format!("locate_fold failed: {e}"));
                None
            }
        };
        let cs: Vec<f64> = (0..=12).map(|k| 0.05 * k as f64).collect();
        let diagram = sweep(&model, &cs, num)?;
        for e in &diagram.entries {
            if e.c == 0.0 {
                continue;
            }
            let expected = if e.c < c_ref { 3 } else { 1 };
            ck.require(
                e.points.len() == expected,
                format!("C = {:.2}: {} branches (expected {expected})", e.c, e.points.len()),
            );
        }
        criteria.push(ck.finish(5, "fold of the bistability window"));
        (fold, diagram)
    };

    // 6. marginal case
    let marginal = {
        let mut ck = Checks::new();
        let mut out = None;
        match (set0.points.first(), stability_c0.first()) {
            (Some(eq), Some(report)) => {
                ck.require(
                    report.classification == Classification::MarginalZeroEigenvalue,
                    format!("classification {:?}", report.classification),
                );
                match report.dominant_real_eigenvalue {
                    Some(l) => ck.bound("|dominant real eigenvalue|", l.abs(), 1e-6),
                    None => ck.require(false, "no real eigenvalue found".into()),
                }
                match marginal_diagnosis(&model, eq, num) {
                    Ok(d) => {
                        ck.bound("|R''(P*) + 0.5|", (d.rpp + 0.5).abs(), 1e-6);
                        ck.require(d.verdict == "nonlinearly unstable", format!("verdict \"{}\"", d.verdict));
                        out = Some(d);
                    }
                    Err(e) => ck.require(false, format!("marginal diagnosis failed: {e}")),
                }
            }
            _ => ck.require(false, "no equilibrium at C = 0".into()),
        }
        criteria.push(ck.finish(6, "marginal diagnosis at C = 0"));
        out
    };

    // 7. simulations
    let lifetime = reference::lifetime();
    let mut scenarios = Vec::new();
    {
        let mut ck = Checks::new();
        let n = opts.cells;
        let a = scenario(
            &model,
            "decline",
            0.0,
            n,
            100.0,
            opts.cfl,
            SimulationState::from_fn(&model, 0.0, n, |s| 1.9 * (-s).exp() / lifetime)?,
        )?;
        let totals = a.trajectory.totals();
        let times = a.trajectory.times();
        let monotone = times
            .iter()
            .zip(&totals)
            .zip(times.iter().zip(&totals).skip(1))
            .filter(|((t, _), _)| **t >= 1.0)
            .all(|((_, p0), (_, p1))| p1 <= p0);
        ck.require(monotone, "(a) P(t) non-increasing for t >= 1".into());
        ck.require(a.final_total < 0.5, format!("(a) P(100) = {:.6e} < 0.5", a.final_total));

        let b = scenario(
            &model,
            "inflow",
            0.2,
            n,
            200.0,
            opts.cfl,
            SimulationState::from_fn(&model, 0.2, n, |s| 0.7 * (-0.4 * s).exp() / lifetime)?,
        )?;
        let qb = net_growth(&model, 0.2, b.final_total, q)?;
        ck.bound("(b) |Q_0.2(P(200)) - 1|", (qb - 1.0).abs(), 1e-3);
        let near = stability_c02.iter().map(|r| (r.p_star - b.final_total).abs()).fold(f64::INFINITY, f64::min);
        ck.bound("(b) distance of P(200) to nearest equilibrium", near, 1e-2);

        let upper = find_equilibria(&model, 0.2, num)?.points.pop();
        if let Some(eq) = upper {
            let c = scenario(&model, "upper", 0.2, n, 100.0, opts.cfl, SimulationState::from_equilibrium(&model, &eq, n, num)?)?;
            let dev = c.trajectory.totals().iter().map(|p| (p - eq.p_star).abs()).fold(0.0, f64::max);
            ck.bound("(c) sup |P(t) - P2|", dev, 1e-2);
            scenarios.extend([a, b, c]);
        } else {
            ck.require(false, "(c) no upper equilibrium at C = 0.2".into());
            scenarios.extend([a, b]);
        }
        criteria.push(ck.finish(7, "simulation scenarios"));
    }

    // 8. first-order balance residual
    {
        let mut ck = Checks::new();
        let mut residuals = Vec::new();
        for n in [256, 512, 1024] {
            let s = scenario(
                &model,
                "refinement",
                0.2,
                n,
                200.0,
                opts.cfl,
                SimulationState::from_fn(&model, 0.2, n, |s| 0.7 * (-0.4 * s).exp() / lifetime)?,
            )?;
            residuals.push(s.max_balance_residual);
        }
        for (w, n) in residuals.windows(2).zip([256, 512]) {
            let order = (w[0] / w[1]).log2();
            ck.require(order >= 0.8, format!("order {n} -> {}: {order:.3} >= 0.8", 2 * n));
        }
        ck.require(true, format!("max residuals {:.3e} {:.3e} {:.3e}", residuals[0], residuals[1], residuals[2]));
        criteria.push(ck.finish(8, "balance-law convergence"));
    }

    // 9. properties
    {
        let mut ck = Checks::new();
        let models = random_models(23, 20, false);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut pi_ok = true;
        let mut q_dev: f64 = 0.0;
        let mut age_dev: f64 = 0.0;
        for m in &models {
            let p = rng.gen_range(0.1..5.0);
            let c = rng.gen_range(0.0..1.0);
            pi_ok &= survival_pi(m, 0.0, p, q)? == 1.0;
            for k in 0..=10 {
                pi_ok &= survival_pi(m, (m.m() * k as f64 / 10.0).min(m.m()), p, q)? > 0.0;
            }
            let lhs = net_growth(m, c, p, q)?;
            let rhs = net_reproduction(m, p, q)? + c * expected_lifetime(m, p, q)? / p;
            q_dev = q_dev.max((lhs - rhs).abs());
            let (size, age) = age_form_crosscheck(m, p, q)?;
            age_dev = age_dev.max((size - age).abs() / size.abs().max(1e-300));
        }
        ck.require(pi_ok, "pi(0, P) = 1 and pi > 0 on 20 random models".into());
        ck.bound("max |Q_C - (R + C L / P)|", q_dev, 1e-10);
        ck.bound("max relative |R_size - R_age| over 20 random models", age_dev, 1e-6);

        let lambdas: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
        let (mut tested, mut monotone) = (0, true);
        for (m, eq) in &battery {
            let lin = linearise(m, eq, num)?;
            let pos = check_positivity(&lin);
            if !(pos.poscond1 && pos.poscond2 && pos.posstrict3) {
                continue;
            }
            tested += 1;
            let ks = lambdas.iter().map(|&l| lin.characteristic(l)).collect::<Result<Vec<_>>>()?;
            monotone &= ks.windows(2).all(|w| w[1] < w[0]);
        }
        ck.require(monotone, format!("K strictly decreasing on [0, 20] at {tested} equilibria satisfying all positivity conditions"));

        let mut min_density = scenarios.iter().map(|s| s.min_density).fold(f64::INFINITY, f64::min);
        for m in models.iter().take(5) {
            let c = rng.gen_range(0.0..0.5);
            let st = SimulationState::from_fn(m, c, 256, |s| (1.0 + s.sin()).abs() * (-0.5 * s).exp())?;
            let cfg = SimulationConfig { cfl: opts.cfl, ..SimulationConfig::new(c, 256, 5.0) };
            min_density = min_density.min(simulate(m, &cfg, st)?.min_density);
        }
        ck.require(min_density >= -1e-12, format!("min simulated density {min_density:.3e} >= -1e-12"));
        criteria.push(ck.finish(9, "property suites"));
    }

    Ok(StudyReport { criteria, stability_c0, stability_c02, marginal, fold, diagram, scenarios })
}
