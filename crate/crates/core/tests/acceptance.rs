//! End-to-end acceptance checks on the built-in example.
//!
//! Each criterion prints one PASS/FAIL line (written straight to stdout so it
//! shows up without `--nocapture`). Criteria run sequentially in one test so
//! their runtimes are measured without competing for the CPU.

use std::io::Write;
use std::time::{Duration, Instant};

use structpop::bifurcation::{locate_fold, sweep};
use structpop::equilibrium::{
    age_form_crosscheck, equilibrium_profile, expected_lifetime, find_equilibria, net_growth,
    net_growth_derivative, net_reproduction, survival_pi,
};
use structpop::simulator::{simulate, SimulationConfig, SimulationState};
use structpop::spectral::{check_positivity, classify, linearise, marginal_diagnosis, Classification};
use structpop::study::{random_equilibria, random_models};
use structpop::{builtin_example, Numerics};

fn ell() -> f64 {
    1.0 - (-6f64).exp()
}

fn r_exact(p: f64) -> f64 {
    p * p * (2.0 - p).exp() / 4.0
}

fn q_exact(c: f64, p: f64) -> f64 {
    r_exact(p) + c * ell() / p
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn dense_roots(c: f64) -> Vec<f64> {
    let (lo, hi, n) = (1e-3, 12.0, 1_000_000);
    let g = |p: f64| q_exact(c, p) - 1.0;
    let dx = (hi - lo) / (n - 1) as f64;
    let mut out = Vec::new();
    for i in 0..n - 1 {
        let (a, b) = (lo + i as f64 * dx, lo + (i + 1) as f64 * dx);
        if (g(a) > 0.0) != (g(b) > 0.0) {
            out.push(bisect(g, a, b));
        }
    }
    out
}

/// Tangency of `Q_C` with 1: `P^2 (3 - P) e^(2-P) = 4` below `P = 2`.
fn fold_oracle() -> (f64, f64) {
    let p = bisect(|p| p * p * (3.0 - p) * (2.0 - p).exp() - 4.0, 0.05, 1.9);
    (p.powi(3) * (2.0 - p) * (2.0 - p).exp() / (4.0 * ell()), p)
}

struct Outcome {
    failures: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }
}

fn run(id: u32, name: &str, budget: Duration, body: impl FnOnce(&mut Outcome)) -> bool {
    let mut out = Outcome { failures: Vec::new() };
    let start = Instant::now();
    body(&mut out);
    let took = start.elapsed();
    out.check(took <= budget, format!("runtime {took:.2?} over budget {budget:?}"));
    let passed = out.failures.is_empty();
    let line = if passed {
        format!("criterion {id} {name}: PASS ({took:.2?})\n")
    } else {
        format!("criterion {id} {name}: FAIL ({took:.2?}): {}\n", out.failures.join("; "))
    };
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    passed
}

fn criterion_1(o: &mut Outcome) {
    let m = builtin_example();
    let num = Numerics::default();
    let set = find_equilibria(&m, 0.0, &num).unwrap();
    o.check(set.points.len() == 1, format!("{} positive roots", set.points.len()));
    let Some(eq) = set.points.first() else { return };
    o.check(eq.tangent, "root not flagged tangent");
    o.check((eq.p_star - 2.0).abs() <= 1e-8, format!("P* = {}", eq.p_star));
    let profile = equilibrium_profile(&m, eq.p_star, &num).unwrap();
    let dev = eq
        .grid
        .nodes()
        .iter()
        .zip(&profile)
        .map(|(&s, p)| (p - 2.0 * (-s).exp() / ell()).abs())
        .fold(0.0, f64::max);
    o.check(dev <= 1e-8, format!("profile deviation {dev:e}"));
}

fn criterion_2(o: &mut Outcome) {
    let m = builtin_example();
    let q = Numerics::default().quadrature;
    for p in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let dev = (net_reproduction(&m, p, &q).unwrap() - r_exact(p)).abs();
        o.check(dev <= 1e-8, format!("R({p}) off by {dev:e}"));
    }
}

fn criterion_3(o: &mut Outcome) {
    let m = builtin_example();
    let num = Numerics::default();
    let mut count = 0;
    for c in [0.0, 0.05, 0.1, 0.2, 0.3] {
        for eq in find_equilibria(&m, c, &num).unwrap().points {
            // derivative of the closed form by central differences
            let h = 1e-5;
            let dq = (q_exact(c, eq.p_star + h) - q_exact(c, eq.p_star - h)) / (2.0 * h);
            let k0 = linearise(&m, &eq, &num).unwrap().characteristic(0.0).unwrap();
            let dev = (k0 - (eq.p_star * dq + 1.0)).abs();
            o.check(dev <= 1e-6, format!("C = {c}, P* = {}: |K(0) - (P* Q' + 1)| = {dev:e}", eq.p_star));
            count += 1;
        }
    }
    o.check(count == 13, format!("{count} example equilibria"));
    let random = random_equilibria(101, 10, &num).unwrap();
    o.check(random.len() == 10, "random models");
    for (rm, eq) in &random {
        let q = &num.quadrature;
        let h = 1e-5;
        let dq = (net_growth(rm, eq.c, eq.p_star + h, q).unwrap() - net_growth(rm, eq.c, eq.p_star - h, q).unwrap())
            / (2.0 * h);
        let k0 = linearise(rm, eq, &num).unwrap().characteristic(0.0).unwrap();
        let dev = (k0 - (eq.p_star * dq + 1.0)).abs();
        o.check(dev <= 1e-6, format!("random model at P* = {}: deviation {dev:e}", eq.p_star));
    }
}

fn criterion_4(o: &mut Outcome) {
    let m = builtin_example();
    let num = Numerics::default();
    let set = find_equilibria(&m, 0.2, &num).unwrap();
    let expected = [Classification::LinearlyStable, Classification::LinearlyUnstable, Classification::LinearlyStable];
    o.check(set.points.len() == 3, format!("{} roots", set.points.len()));
    for (eq, want) in set.points.iter().zip(expected) {
        let rep = classify(&m, eq, &num, true).unwrap();
        o.check(rep.classification == want, format!("P* = {}: {:?}", eq.p_star, rep.classification));
        let eig_sign = rep.dominant_real_eigenvalue.map_or(-1.0, f64::signum);
        o.check(eig_sign == rep.dq.signum(), format!("P* = {}: eigenvalue {:?}", eq.p_star, rep.dominant_real_eigenvalue));
    }
    let oracle = dense_roots(0.2);
    o.check(oracle.len() == set.points.len(), format!("dense scan found {} roots", oracle.len()));
    for (eq, r) in set.points.iter().zip(&oracle) {
        o.check((eq.p_star - r).abs() <= 1e-8, format!("{} vs dense scan {r}", eq.p_star));
    }
}

fn criterion_5(o: &mut Outcome) {
    let m = builtin_example();
    let num = Numerics::default();
    let q = &num.quadrature;
    let (c_ref, _) = fold_oracle();
    let fold = match locate_fold(&m, 0.1, 1.0, &num) {
        Ok(f) => f,
        Err(e) => return o.check(false, format!("locate_fold: {e}")),
    };
    let resid = net_growth(&m, fold.c_star, fold.p_fold, q).unwrap() - 1.0;
    let slope = net_growth_derivative(&m, fold.c_star, fold.p_fold, q).unwrap();
    o.check(resid.abs() <= 1e-6, format!("|Q - 1| = {resid:e}"));
    o.check(slope.abs() <= 1e-5, format!("|Q'| = {slope:e}"));
    o.check((fold.c_star - c_ref).abs() <= 1e-5, format!("C* = {} vs oracle {c_ref}", fold.c_star));
    let cs: Vec<f64> = [0.05, 0.15, 0.25, 0.35, 0.38].into_iter().chain([0.4, 0.5, 0.7, 1.0]).collect();
    let diagram = sweep(&m, &cs, &num).unwrap();
    for (c, n) in cs.iter().zip(diagram.branch_counts()) {
        let want = if *c < c_ref { 3 } else { 1 };
        o.check(n == want, format!("{n} branches at C = {c}"));
    }
}

fn criterion_6(o: &mut Outcome) {
    let m = builtin_example();
    let num = Numerics::default();
    let set = find_equilibria(&m, 0.0, &num).unwrap();
    let Some(eq) = set.points.first() else { return o.check(false, "no equilibrium") };
    let rep = classify(&m, eq, &num, true).unwrap();
    o.check(rep.classification == Classification::MarginalZeroEigenvalue, format!("{:?}", rep.classification));
    o.check(
        rep.dominant_real_eigenvalue.is_some_and(|l| l.abs() <= 1e-6),
        format!("eigenvalue {:?}", rep.dominant_real_eigenvalue),
    );
    // R'' of P^2 e^(2-P)/4 is (2 - 4P + P^2) e^(2-P)/4
    let rpp_exact = (2.0 - 8.0 + 4.0) / 4.0;
    let d = marginal_diagnosis(&m, eq, &num).unwrap();
    o.check((d.rpp - rpp_exact).abs() <= 1e-6, format!("R'' = {}", d.rpp));
    o.check(d.verdict == "nonlinearly unstable", d.verdict.clone());
}

fn scenario_b(cells: usize) -> structpop::simulator::Trajectory {
    let m = builtin_example();
    let cfg = SimulationConfig::new(0.2, cells, 200.0);
    let st = SimulationState::from_fn(&m, 0.2, cells, |s| 0.7 * (-0.4 * s).exp() / ell()).unwrap();
    simulate(&m, &cfg, st).unwrap()
}

fn criterion_7(o: &mut Outcome) {
    let m = builtin_example();
    let num = Numerics::default();
    let n = 1024;

    let cfg = SimulationConfig::new(0.0, n, 100.0);
    o.check(cfg.cfl == 0.9, "cfl");
    let st = SimulationState::from_fn(&m, 0.0, n, |s| 1.9 * (-s).exp() / ell()).unwrap();
    let a = simulate(&m, &cfg, st).unwrap();
    let after: Vec<f64> = a.times().iter().zip(a.totals()).filter(|(t, _)| **t >= 1.0).map(|(_, p)| p).collect();
    o.check(after.windows(2).all(|w| w[1] <= w[0]), "(a) P(t) increases after t = 1");
    o.check(a.final_total() < 0.5, format!("(a) P(100) = {}", a.final_total()));

    let b = scenario_b(n);
    let p_end = b.final_total();
    o.check((q_exact(0.2, p_end) - 1.0).abs() <= 1e-3, format!("(b) Q(P(200)) - 1 = {}", q_exact(0.2, p_end) - 1.0));
    let set = find_equilibria(&m, 0.2, &num).unwrap();
    o.check(set.points.iter().any(|e| (e.p_star - p_end).abs() <= 1e-2), format!("(b) P(200) = {p_end}"));

    let upper = set.points.last().unwrap();
    let cfg = SimulationConfig::new(0.2, n, 100.0);
    let c = simulate(&m, &cfg, SimulationState::from_equilibrium(&m, upper, n, &num).unwrap()).unwrap();
    let dev = c.totals().iter().map(|p| (p - upper.p_star).abs()).fold(0.0, f64::max);
    o.check(dev <= 1e-2, format!("(c) sup deviation {dev}"));
}

fn criterion_8(o: &mut Outcome) {
    let res: Vec<f64> = [256, 512, 1024].iter().map(|&n| scenario_b(n).max_balance_residual()).collect();
    for w in res.windows(2) {
        let order = (w[0] / w[1]).log2();
        o.check(order >= 0.8, format!("observed order {order:.3} from residuals {res:?}"));
    }
}

fn criterion_9(o: &mut Outcome) {
    let num = Numerics::default();
    let q = &num.quadrature;
    let models = random_models(202, 20, false);
    for (k, m) in models.iter().enumerate() {
        let p = 0.2 + 0.25 * k as f64;
        let c = 0.05 * k as f64;
        o.check(survival_pi(m, 0.0, p, q).unwrap() == 1.0, format!("model {k}: pi(0) != 1"));
        let positive = (0..=20).all(|i| survival_pi(m, (m.m() * i as f64 / 20.0).min(m.m()), p, q).unwrap() > 0.0);
        o.check(positive, format!("model {k}: pi not positive"));
        let lhs = net_growth(m, c, p, q).unwrap();
        let rhs = net_reproduction(m, p, q).unwrap() + c * expected_lifetime(m, p, q).unwrap() / p;
        o.check((lhs - rhs).abs() <= 1e-10, format!("model {k}: Q identity off by {:e}", lhs - rhs));
        let (size, age) = age_form_crosscheck(m, p, q).unwrap();
        o.check((size - age).abs() <= 1e-6 * size.abs().max(1.0), format!("model {k}: size {size} vs age {age}"));
    }

    let example = builtin_example();
    let mut battery: Vec<_> = [0.0, 0.05, 0.1, 0.2, 0.3]
        .iter()
        .flat_map(|&c| find_equilibria(&example, c, &num).unwrap().points)
        .map(|eq| (example.clone(), eq))
        .collect();
    battery.extend(random_equilibria(303, 10, &num).unwrap());
    let mut tested = 0;
    for (m, eq) in &battery {
        let lin = linearise(m, eq, &num).unwrap();
        let pos = check_positivity(&lin);
        if !(pos.poscond1 && pos.poscond2 && pos.posstrict3) {
            continue;
        }
        tested += 1;
        let ks: Vec<f64> = (0..=40).map(|i| lin.characteristic(0.5 * i as f64).unwrap()).collect();
        o.check(ks.windows(2).all(|w| w[1] < w[0]), format!("K not decreasing at P* = {}", eq.p_star));
    }
    o.check(tested >= 10, format!("only {tested} equilibria met the positivity conditions"));

    for (k, m) in models.iter().take(6).enumerate() {
        let c = 0.1 * k as f64;
        let st = SimulationState::from_fn(m, c, 256, |s| (1.0 + (3.0 * s).cos()) * (-0.3 * s).exp()).unwrap();
        let tr = simulate(m, &SimulationConfig::new(c, 256, 5.0), st).unwrap();
        o.check(tr.min_density >= -1e-12, format!("model {k}: density {}", tr.min_density));
    }
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "example equilibrium", secs(1), criterion_1),
        run(2, "closed-form net reproduction", secs(1), criterion_2),
        run(3, "K(0) identity", secs(10), criterion_3),
        run(4, "stability pattern at C = 0.2", secs(10), criterion_4),
        run(5, "fold", secs(30), criterion_5),
        run(6, "marginal diagnosis", secs(5), criterion_6),
        run(7, "simulation scenarios", secs(120), criterion_7),
        run(8, "scheme convergence", secs(120), criterion_8),
        run(9, "property suites", secs(60), criterion_9),
    ];
    let failed: Vec<usize> = (1..=9).filter(|&i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
