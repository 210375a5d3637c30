//! Explicit upwind time integration of the nonlinear problem.
//!
//! The density is stored as `N` cell averages centred at `(i + 1/2) h`
//! plus the boundary value `p(0, t)`. Each step freezes the rates at the
//! current `P`, transports and kills the cells, and then sets the boundary
//! value from the birth law using the updated cells:
//!
//! ```text
//! p_i' = p_i - dt/h (gamma_i p_i - gamma_{i-1} p_{i-1}) - dt mu_i p_i     (gamma_{-1} p_{-1} = gamma(0) p(0))
//! p(0)' = (C + h sum beta_i p_i') / gamma(0)
//! ```
//!
//! `P` is the midpoint sum `h sum p_i`.

use serde::Serialize;

use crate::config::Numerics;
use crate::equilibrium::{survival_samples, EquilibriumPoint};
use crate::error::{Error, Result};
use crate::model::ModelIngredients;

/// Densities below this are treated as a scheme failure.
pub const NEGATIVE_DENSITY_TOLERANCE: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub c: f64,
    pub cells: usize,
    pub t_final: f64,
    /// Courant factor.
    pub cfl: f64,
    /// Time between recorded samples.
    pub output_every: f64,
    /// Record the full density at every sample.
    pub keep_density: bool,
}

impl SimulationConfig {
    pub fn new(c: f64, cells: usize, t_final: f64) -> Self {
        Self { c, cells, t_final, cfl: 0.9, output_every: 1.0, keep_density: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidInflow(self.c));
        }
        if self.cells == 0 {
            return Err(Error::InvalidConfig("grid N must be positive".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidConfig(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidConfig(format!("T must be positive, got {}", self.t_final)));
        }
        if !(self.output_every > 0.0 && self.output_every.is_finite()) {
            return Err(Error::InvalidConfig(format!("output_every must be positive, got {}", self.output_every)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationState {
    pub t: f64,
    /// `p(0, t)`.
    pub boundary: f64,
    /// Cell values at the midpoints `(i + 1/2) h`.
    pub cells: Vec<f64>,
    /// `h sum cells`.
    pub p_total: f64,
    h: f64,
}

impl SimulationState {
    /// Sample `initial` at the cell midpoints; the boundary value follows from the birth law.
    pub fn from_fn<F: Fn(f64) -> f64>(model: &ModelIngredients, c: f64, cells: usize, initial: F) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidConfig("grid N must be positive".into()));
        }
        let h = model.m() / cells as f64;
        let values = (0..cells).map(|i| initial((i as f64 + 0.5) * h)).collect();
        Self::from_cells(model, c, values)
    }

    pub fn from_cells(model: &ModelIngredients, c: f64, cells: Vec<f64>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidConfig("grid N must be positive".into()));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidInflow(c));
        }
        let h = model.m() / cells.len() as f64;
        if let Some(i) = cells.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "initial density must be finite and nonnegative, got {} at s = {}",
                cells[i],
                (i as f64 + 0.5) * h
            )));
        }
        let p_total = h * cells.iter().sum::<f64>();
        let births: f64 = cells.iter().enumerate().map(|(i, v)| model.beta((i as f64 + 0.5) * h, p_total) * v).sum();
        let boundary = (c + h * births) / model.gamma_checked(0.0, p_total)?;
        Ok(Self { t: 0.0, boundary, cells, p_total, h })
    }

    /// The equilibrium profile `p*` sampled at the midpoints of an `N`-cell grid.
    pub fn from_equilibrium(model: &ModelIngredients, eq: &EquilibriumPoint, cells: usize, num: &Numerics) -> Result<Self> {
        // survival on a half-spaced grid: odd nodes are the midpoints
        let sv = survival_samples(model, eq.p_star, 2 * cells)?;
        let int_pi = crate::numerics::simpson_samples(
            &survival_samples(model, eq.p_star, num.quadrature.panel_count())?.pi,
            model.m() / num.quadrature.panel_count() as f64,
        );
        let p0 = eq.p_star / int_pi;
        let values = (0..cells).map(|i| p0 * sv.pi[2 * i + 1]).collect();
        Self::from_cells(model, eq.c, values)
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// `s = 0` followed by the cell midpoints.
    pub fn abscissae(&self) -> Vec<f64> {
        std::iter::once(0.0).chain((0..self.cells.len()).map(|i| (i as f64 + 0.5) * self.h)).collect()
    }

    /// `p(0)` followed by the cell values, matching [`abscissae`](Self::abscissae).
    pub fn density(&self) -> Vec<f64> {
        std::iter::once(self.boundary).chain(self.cells.iter().copied()).collect()
    }

    pub fn min_density(&self) -> f64 {
        self.cells.iter().copied().fold(self.boundary, f64::min)
    }
}

/// What one step did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepInfo {
    pub dt: f64,
    /// `|dP/dt - (C + ∫(beta - mu) p - gamma(m) p(m))|` over this step.
    pub balance_residual: f64,
}

/// Largest stable step at the current state: `cfl h / max gamma`, further
/// limited so that no cell loses more than its content.
pub fn stable_dt(model: &ModelIngredients, state: &SimulationState, cfl: f64) -> Result<f64> {
    let p = state.p_total;
    let h = state.h;
    let mut gmax = model.gamma_checked(0.0, p)?;
    let mut cap = f64::INFINITY;
    for i in 0..state.cells.len() {
        let s = (i as f64 + 0.5) * h;
        let g = model.gamma_checked(s, p)?;
        gmax = gmax.max(g);
        let loss = g / h + model.mu(s, p).max(0.0);
        cap = cap.min(1.0 / loss);
    }
    Ok((cfl * h / gmax).min(cap))
}

/// Advance `state` by one step of at most `max_dt`.
pub fn step(model: &ModelIngredients, state: &mut SimulationState, c: f64, cfl: f64, max_dt: f64) -> Result<StepInfo> {
    let dt = stable_dt(model, state, cfl)?.min(max_dt);
    if !(dt > 1e-14 * state.t.abs().max(1.0)) {
        return Err(Error::StepUnderflow { t: state.t, dt });
    }
    let p = state.p_total;
    let h = state.h;
    let n = state.cells.len();
    let gamma0 = model.gamma_checked(0.0, p)?;
    let mut flux_in = gamma0 * state.boundary;
    let mut new = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    let mut net_birth = 0.0;
    for (i, &v) in state.cells.iter().enumerate() {
        let s = (i as f64 + 0.5) * h;
        let g = model.gamma(s, p);
        let mu = model.mu(s, p);
        let b = model.beta(s, p);
        let flux_out = g * v;
        let u = v - dt / h * (flux_out - flux_in) - dt * mu * v;
        if u < NEGATIVE_DENSITY_TOLERANCE || !u.is_finite() {
            return Err(Error::NegativeDensity { value: u, s, t: state.t + dt });
        }
        net_birth += (b - mu) * v;
        beta.push(b);
        new.push(u);
        flux_in = flux_out;
    }
    let outflow = model.gamma(model.m(), p) * state.cells[n - 1];
    let p_new = h * new.iter().sum::<f64>();
    let balance_residual = ((p_new - p) / dt - (c + h * net_birth - outflow)).abs();
    let births: f64 = beta.iter().zip(&new).map(|(b, u)| b * u).sum();
    state.boundary = (c + h * births) / gamma0;
    state.cells = new;
    state.p_total = p_new;
    state.t += dt;
    Ok(StepInfo { dt, balance_residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub p_total: f64,
    /// Density at the trajectory abscissae, when requested.
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// `s = 0` followed by the cell midpoints.
    pub abscissae: Vec<f64>,
    pub samples: Vec<Sample>,
    /// Largest balance-law defect over the steps leading up to each sample
    /// (zero for the initial sample).
    pub balance_residuals: Vec<f64>,
    pub min_density: f64,
    pub steps: usize,
    pub final_state: SimulationState,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.p_total).collect()
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.balance_residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn final_total(&self) -> f64 {
        self.final_state.p_total
    }
}

/// Integrate from `initial` to `config.t_final`, sampling every `config.output_every`.
pub fn simulate(model: &ModelIngredients, config: &SimulationConfig, initial: SimulationState) -> Result<Trajectory> {
    config.validate()?;
    if initial.cells.len() != config.cells {
        return Err(Error::InvalidConfig(format!(
            "initial state has {} cells, config asks for {}",
            initial.cells.len(),
            config.cells
        )));
    }
    let mut state = initial;
    let abscissae = state.abscissae();
    let mut samples = Vec::new();
    let mut residuals = Vec::new();
    let mut min_density = state.min_density();
    let mut steps = 0;
    let sample_count = (config.t_final / config.output_every).ceil() as usize;
    let t0 = state.t;
    let record = |state: &SimulationState, samples: &mut Vec<Sample>| {
        samples.push(Sample {
            t: state.t,
            p_total: state.p_total,
            density: config.keep_density.then(|| state.density()),
        });
    };
    record(&state, &mut samples);
    residuals.push(0.0);
    for k in 1..=sample_count {
        let target = (t0 + k as f64 * config.output_every).min(t0 + config.t_final);
        let mut worst = 0.0f64;
        while state.t < target {
            let remaining = target - state.t;
            let info = step(model, &mut state, config.c, config.cfl, remaining)?;
            worst = worst.max(info.balance_residual);
            // absorb rounding so the loop lands exactly on the sample time
            if target - state.t <= 1e-12 * target.abs().max(1.0) {
                state.t = target;
            }
            min_density = min_density.min(state.min_density());
            steps += 1;
        }
        residuals.push(worst);
        record(&state, &mut samples);
    }
    log::debug!("simulated to t = {} in {steps} steps, P = {}", state.t, state.p_total);
    Ok(Trajectory { abscissae, samples, balance_residuals: residuals, min_density, steps, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_example;
    use proptest::prelude::*;

    fn lifetime() -> f64 {
        1.0 - (-6f64).exp()
    }

    #[test]
    fn equilibrium_is_nearly_fixed_by_one_step() {
        let m = builtin_example();
        // the one-step defect is about 1.3 h^2, so the bound needs h < 7e-4
        let n = 16384;
        let exact = |s: f64| 2.0 * (-s).exp() / lifetime();
        let mut st = SimulationState::from_fn(&m, 0.0, n, exact).unwrap();
        let h = st.spacing();
        step(&m, &mut st, 0.0, 0.9, f64::INFINITY).unwrap();
        let l1: f64 = st.cells.iter().enumerate().map(|(i, v)| (v - exact((i as f64 + 0.5) * h)).abs()).sum::<f64>() * h;
        assert!(l1 <= 1e-3 * h, "{l1} vs {}", 1e-3 * h);
    }

    #[test]
    fn pure_decay_is_monotone() {
        let m = ModelIngredients::from_expressions(6.0, "0", "25", "1").unwrap();
        let mut st = SimulationState::from_fn(&m, 0.0, 256, |s| 1.0 + s).unwrap();
        let mut last = st.p_total;
        for _ in 0..200 {
            step(&m, &mut st, 0.0, 0.9, f64::INFINITY).unwrap();
            assert!(st.p_total < last);
            last = st.p_total;
        }
    }

    #[test]
    fn pure_transport_loses_outflux() {
        let m = ModelIngredients::from_expressions(6.0, "0", "0", "1").unwrap();
        let mut st = SimulationState::from_fn(&m, 0.0, 512, |s| (-0.3 * s).exp()).unwrap();
        let h = st.spacing();
        for _ in 0..20 {
            let before = st.p_total;
            let last = *st.cells.last().unwrap();
            let info = step(&m, &mut st, 0.0, 0.9, f64::INFINITY).unwrap();
            let dp = st.p_total - before;
            assert!((dp + info.dt * last).abs() < 1e-12);
            // p at s = m versus the last cell centre
            assert!((dp + info.dt * (-0.3 * (6.0 - st.t)).exp()).abs() < info.dt * h);
        }
    }

    #[test]
    fn dt_respects_growth_and_mortality() {
        let m = ModelIngredients::from_expressions(6.0, "0", "500", "2").unwrap();
        let st = SimulationState::from_fn(&m, 0.0, 100, |_| 1.0).unwrap();
        let dt = stable_dt(&m, &st, 0.9).unwrap();
        assert!(dt <= 1.0 / (2.0 / 0.06 + 500.0) + 1e-15);
        let mild = ModelIngredients::from_expressions(6.0, "0", "0", "2").unwrap();
        assert!((stable_dt(&mild, &st, 0.9).unwrap() - 0.9 * 0.06 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_follows_birth_law() {
        let m = builtin_example();
        let st = SimulationState::from_fn(&m, 0.2, 64, |s| (-s).exp()).unwrap();
        let h = st.spacing();
        let births: f64 = (0..64).map(|i| m.beta((i as f64 + 0.5) * h, st.p_total) * st.cells[i]).sum::<f64>() * h;
        assert!((st.boundary - (0.2 + births)).abs() < 1e-14);
        assert_eq!(st.abscissae().len(), 65);
        assert_eq!(st.density()[0], st.boundary);
    }

    #[test]
    fn rejects_bad_initial_data() {
        let m = builtin_example();
        assert!(matches!(SimulationState::from_fn(&m, 0.0, 16, |s| s - 1.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(SimulationState::from_fn(&m, -1.0, 16, |_| 1.0), Err(Error::InvalidInflow(_))));
    }

    #[test]
    fn samples_land_on_output_times() {
        let m = builtin_example();
        let mut cfg = SimulationConfig::new(0.2, 128, 2.0);
        cfg.output_every = 0.25;
        cfg.keep_density = true;
        let st = SimulationState::from_fn(&m, 0.2, 128, |s| (-s).exp()).unwrap();
        let tr = simulate(&m, &cfg, st).unwrap();
        let times = tr.times();
        assert_eq!(times.len(), 9);
        for (k, t) in times.iter().enumerate() {
            assert_eq!(*t, k as f64 * 0.25);
        }
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(tr.balance_residuals.len(), 9);
        assert_eq!(tr.samples[3].density.as_ref().unwrap().len(), 129);
        for s in &tr.samples {
            let d = s.density.as_ref().unwrap();
            let mass = d[1..].iter().sum::<f64>() * 6.0 / 128.0;
            assert!((mass - s.p_total).abs() <= 1e-12 * s.p_total);
        }
    }

    #[test]
    fn uneven_final_interval() {
        let m = builtin_example();
        let mut cfg = SimulationConfig::new(0.0, 64, 1.0);
        cfg.output_every = 0.3;
        let st = SimulationState::from_fn(&m, 0.0, 64, |s| (-s).exp()).unwrap();
        let tr = simulate(&m, &cfg, st).unwrap();
        let expected = [0.0, 0.3, 0.6, 0.9, 1.0];
        assert_eq!(tr.samples.len(), expected.len());
        for (t, e) in tr.times().iter().zip(expected) {
            assert!((t - e).abs() < 1e-14);
        }
        assert_eq!(tr.final_state.t, 1.0);
    }

    #[test]
    fn mismatched_cells_rejected() {
        let m = builtin_example();
        let cfg = SimulationConfig::new(0.0, 64, 1.0);
        let st = SimulationState::from_fn(&m, 0.0, 32, |s| (-s).exp()).unwrap();
        assert!(matches!(simulate(&m, &cfg, st), Err(Error::InvalidConfig(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn density_stays_nonnegative(
            a in 0.0f64..3.0,
            k in 0.1f64..5.0,
            mu in 0.0f64..30.0,
            g in 0.2f64..3.0,
            c in 0.0f64..1.0,
            bumps in proptest::collection::vec(0.0f64..2.0, 1..6),
        ) {
            let beta = format!("{a}*P*exp(-P)*s");
            let gamma = format!("{g}+0.1*s/(1+P)");
            let m = ModelIngredients::from_expressions(6.0, &beta, &format!("{mu}"), &gamma).unwrap();
            let nb = bumps.len() as f64;
            let init = |s: f64| {
                let j = ((s / 6.0) * nb) as usize;
                bumps[j.min(bumps.len() - 1)] * (-k * s).exp()
            };
            let mut st = SimulationState::from_fn(&m, c, 128, init).unwrap();
            for _ in 0..300 {
                step(&m, &mut st, c, 0.9, f64::INFINITY).unwrap();
                prop_assert!(st.min_density() >= NEGATIVE_DENSITY_TOLERANCE);
            }
        }
    }
}
