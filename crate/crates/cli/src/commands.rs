use std::collections::BTreeMap;

use anyhow::{anyhow, Context};
use serde::Serialize;
use structpop::bifurcation::{sweep, BifurcationDiagram};
use structpop::equilibrium::find_equilibria;
use structpop::expr::{parse_rate, Var};
use structpop::simulator::{simulate, SimulationConfig, SimulationState, Trajectory};
use structpop::spectral::{classify, marginal_diagnosis, Classification, MarginalDiagnosis, StabilityReport};
use structpop::study::{run_study, StudyOptions, StudyReport};
use structpop::{ModelIngredients, Numerics};

use crate::config::RunConfig;
use crate::output::{header, to_csv, to_json, Cell, OutputDir};

/// Why a command stopped. Input problems exit with 2, the rest with 1.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Compute(anyhow::Error),
    Assertion(usize),
}

pub trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn compute(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn compute(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

pub type Params = BTreeMap<String, String>;

#[derive(Serialize)]
struct ModelEcho {
    m: f64,
    beta: Option<String>,
    mu: Option<String>,
    gamma: Option<String>,
}

fn echo(model: &ModelIngredients) -> ModelEcho {
    let rates = model.rate_strings();
    ModelEcho {
        m: model.m(),
        beta: rates.as_ref().map(|r| r.0.clone()),
        mu: rates.as_ref().map(|r| r.1.clone()),
        gamma: rates.map(|r| r.2),
    }
}

#[derive(Serialize)]
struct EquilibriumRow {
    #[serde(rename = "P_star")]
    p_star: f64,
    p0: f64,
    #[serde(rename = "dQ")]
    dq: f64,
    tangent: bool,
    residual: f64,
}

#[derive(Serialize)]
struct EquilibriaReport {
    model: ModelEcho,
    #[serde(rename = "C")]
    c: f64,
    trivial: bool,
    window: (f64, f64),
    equilibria: Vec<EquilibriumRow>,
}

pub fn equilibria(
    cfg: &RunConfig,
    c: Option<f64>,
    p_hi: Option<f64>,
    n: Option<usize>,
    out: &mut OutputDir,
    params: &mut Params,
) -> Result<(), Failure> {
    let model = cfg.model().input()?;
    let mut num = cfg.numerics(n).input()?;
    if let Some(p_hi) = p_hi {
        num = num.with_population_max(p_hi);
        num.validate().input()?;
        params.insert("P_hi".into(), p_hi.to_string());
    }
    let c = cfg.inflow(c).input()?;
    params.insert("C".into(), c.to_string());
    let set = find_equilibria(&model, c, &num).compute()?;
    let rows: Vec<EquilibriumRow> = set
        .points
        .iter()
        .map(|e| EquilibriumRow { p_star: e.p_star, p0: e.p0, dq: e.dq, tangent: e.tangent, residual: e.residual })
        .collect();
    let csv = to_csv(
        &header(&["P_star", "p0", "dQ", "tangent"]),
        rows.iter().map(|r| vec![Cell::F(r.p_star), Cell::F(r.p0), Cell::F(r.dq), Cell::B(r.tangent)]),
    )
    .compute()?;
    out.write("equilibria.csv", &csv).input()?;
    let report = EquilibriaReport { model: echo(&model), c, trivial: set.trivial, window: set.window, equilibria: rows };
    out.write("equilibria.json", &to_json(&report).compute()?).input()?;
    for e in &set.points {
        println!("P* = {:.10}  dQ = {:+.4e}{}", e.p_star, e.dq, if e.tangent { "  (tangent)" } else { "" });
    }
    Ok(())
}

#[derive(Serialize)]
struct StabilityEntry {
    #[serde(flatten)]
    report: StabilityReport,
    marginal_diagnosis: Option<MarginalDiagnosis>,
    marginal_diagnosis_error: Option<String>,
}

#[derive(Serialize)]
struct StabilityOutput {
    model: ModelEcho,
    #[serde(rename = "C")]
    c: f64,
    equilibria: Vec<StabilityEntry>,
}

pub fn stability(
    cfg: &RunConfig,
    c: Option<f64>,
    n: Option<usize>,
    out: &mut OutputDir,
    params: &mut Params,
) -> Result<(), Failure> {
    let model = cfg.model().input()?;
    let num = cfg.numerics(n).input()?;
    let c = cfg.inflow(c).input()?;
    params.insert("C".into(), c.to_string());
    let set = find_equilibria(&model, c, &num).compute()?;
    let mut entries = Vec::new();
    for eq in &set.points {
        let report = classify(&model, eq, &num, true).compute()?;
        let (diag, diag_err) = if report.classification == Classification::MarginalZeroEigenvalue {
            match marginal_diagnosis(&model, eq, &num) {
                Ok(d) => (Some(d), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        println!(
            "P* = {:.10}  {}{}",
            report.p_star,
            report.classification.as_str(),
            diag.as_ref().map(|d| format!(" ({})", d.verdict)).unwrap_or_default()
        );
        entries.push(StabilityEntry { report, marginal_diagnosis: diag, marginal_diagnosis_error: diag_err });
    }
    let output = StabilityOutput { model: echo(&model), c, equilibria: entries };
    out.write("stability.json", &to_json(&output).compute()?).input()?;
    Ok(())
}

pub struct SimulateArgs {
    pub c: Option<f64>,
    pub t: Option<f64>,
    pub n: Option<usize>,
    pub initial: Option<String>,
    pub density: bool,
}

#[derive(Serialize)]
struct SimulationSummary {
    #[serde(rename = "C")]
    c: f64,
    #[serde(rename = "N")]
    cells: usize,
    #[serde(rename = "T")]
    t_final: f64,
    initial: String,
    steps: usize,
    initial_total: f64,
    final_total: f64,
    min_density: f64,
    max_balance_residual: f64,
}

fn initial_state(
    model: &ModelIngredients,
    spec: &str,
    c: f64,
    cells: usize,
    num: &Numerics,
) -> Result<SimulationState, Failure> {
    if let Some(index) = spec.strip_prefix("equilibrium:") {
        let k: usize = index.trim().parse().with_context(|| format!("bad equilibrium index `{index}`")).input()?;
        let set = find_equilibria(model, c, num).compute()?;
        let count = set.points.len();
        let eq = set
            .points
            .into_iter()
            .nth(k)
            .ok_or_else(|| anyhow!("equilibrium:{k} requested but C = {c} has {count} positive equilibria"))
            .input()?;
        return SimulationState::from_equilibrium(model, &eq, cells, num).input();
    }
    let expr = parse_rate(spec).with_context(|| format!("initial density `{spec}`")).input()?;
    if expr.depends_on(Var::Population) {
        return Err(Failure::Input(anyhow!("initial density `{spec}` may only depend on s")));
    }
    SimulationState::from_fn(model, c, cells, |s| expr.eval(s, 0.0)).input()
}

fn trajectory_csv(tr: &Trajectory) -> anyhow::Result<Vec<u8>> {
    let with_density = tr.samples.first().is_some_and(|s| s.density.is_some());
    let mut head = header(&["t", "P"]);
    if with_density {
        head.extend(tr.abscissae.iter().map(|s| crate::output::fmt_f64(*s)));
    }
    to_csv(
        &head,
        tr.samples.iter().map(|s| {
            let mut row = vec![Cell::F(s.t), Cell::F(s.p_total)];
            if let Some(d) = &s.density {
                row.extend(d.iter().map(|v| Cell::F(*v)));
            }
            row
        }),
    )
}

fn snapshot_csv(state: &SimulationState) -> anyhow::Result<Vec<u8>> {
    to_csv(
        &header(&["s", "p"]),
        state.abscissae().into_iter().zip(state.density()).map(|(s, p)| vec![Cell::F(s), Cell::F(p)]),
    )
}

pub fn simulate_cmd(cfg: &RunConfig, args: SimulateArgs, out: &mut OutputDir, params: &mut Params) -> Result<(), Failure> {
    let model = cfg.model().input()?;
    let num = cfg.numerics(args.n).input()?;
    let c = cfg.inflow(args.c).input()?;
    let cells = num.grid_cells;
    let t_final = args.t.or(cfg.sim.t).unwrap_or(100.0);
    let spec = args.initial.unwrap_or_else(|| "exp(-s)".into());
    let mut sim = SimulationConfig::new(c, cells, t_final);
    if let Some(cfl) = cfg.sim.cfl {
        sim.cfl = cfl;
    }
    if let Some(every) = cfg.sim.output_every {
        sim.output_every = every;
    }
    sim.keep_density = args.density;
    sim.validate().input()?;
    for (k, v) in [
        ("C", c.to_string()),
        ("N", cells.to_string()),
        ("T", t_final.to_string()),
        ("cfl", sim.cfl.to_string()),
        ("output_every", sim.output_every.to_string()),
        ("initial", spec.clone()),
    ] {
        params.insert(k.into(), v);
    }

    let state = initial_state(&model, &spec, c, cells, &num)?;
    let initial_total = state.p_total;
    let tr = simulate(&model, &sim, state).compute()?;
    out.write("trajectory.csv", &trajectory_csv(&tr).compute()?).input()?;
    out.write("snapshot.csv", &snapshot_csv(&tr.final_state).compute()?).input()?;
    let summary = SimulationSummary {
        c,
        cells,
        t_final,
        initial: spec,
        steps: tr.steps,
        initial_total,
        final_total: tr.final_total(),
        min_density: tr.min_density,
        max_balance_residual: tr.max_balance_residual(),
    };
    out.write("simulation.json", &to_json(&summary).compute()?).input()?;
    println!("P(0) = {:.10}  P({t_final}) = {:.10}  steps = {}", initial_total, tr.final_total(), tr.steps);
    Ok(())
}

fn diagram_csvs(diagram: &BifurcationDiagram) -> anyhow::Result<(Vec<u8>, Vec<u8>)> {
    let branches = to_csv(
        &header(&["C", "P_star", "classification", "tangent_flag"]),
        diagram.entries.iter().flat_map(|e| {
            e.points.iter().map(move |p| {
                vec![
                    Cell::F(e.c),
                    Cell::F(p.p_star),
                    Cell::S(p.classification.map_or("Unclassified".into(), |c| format!("{c:?}"))),
                    Cell::B(p.tangent),
                ]
            })
        }),
    )?;
    let folds = to_csv(
        &header(&["C_star", "P_fold"]),
        diagram.folds.iter().map(|f| vec![Cell::F(f.c_star), Cell::F(f.p_fold)]),
    )?;
    Ok((branches, folds))
}

pub fn bifurcate(
    cfg: &RunConfig,
    (c_lo, c_hi, steps): (f64, f64, usize),
    n: Option<usize>,
    out: &mut OutputDir,
    params: &mut Params,
) -> Result<(), Failure> {
    if steps == 0 {
        return Err(Failure::Input(anyhow!("--steps must be at least 1")));
    }
    if !(c_lo >= 0.0 && c_lo < c_hi && c_hi.is_finite()) {
        return Err(Failure::Input(anyhow!("need 0 <= C_lo < C_hi, got [{c_lo}, {c_hi}]")));
    }
    let model = cfg.model().input()?;
    let num = cfg.numerics(n).input()?;
    params.insert("C_lo".into(), c_lo.to_string());
    params.insert("C_hi".into(), c_hi.to_string());
    params.insert("steps".into(), steps.to_string());
    let cs: Vec<f64> = (0..=steps).map(|k| c_lo + (c_hi - c_lo) * k as f64 / steps as f64).collect();
    let diagram = sweep(&model, &cs, &num).compute()?;
    let (branches, folds) = diagram_csvs(&diagram).compute()?;
    out.write("branches.csv", &branches).input()?;
    out.write("folds.csv", &folds).input()?;
    for f in &diagram.folds {
        println!("fold at C* = {:.10}, P = {:.10}", f.c_star, f.p_fold);
    }
    if diagram.folds.is_empty() {
        println!("no fold in [{c_lo}, {c_hi}]");
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    all_passed: bool,
    #[serde(rename = "N")]
    cells: usize,
    #[serde(flatten)]
    report: &'a StudyReport,
}

pub fn reproduce(cfg: &RunConfig, n: Option<usize>, out: &mut OutputDir, params: &mut Params) -> Result<(), Failure> {
    let num = cfg.numerics(n).input()?;
    let mut opts = StudyOptions { cells: num.grid_cells, numerics: num, ..StudyOptions::default() };
    if let Some(cfl) = cfg.sim.cfl {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Failure::Input(anyhow!("cfl must lie in (0, 1], got {cfl}")));
        }
        opts.cfl = cfl;
    }
    params.insert("N".into(), opts.cells.to_string());
    params.insert("cfl".into(), opts.cfl.to_string());
    let report = run_study(&opts).compute()?;

    let summary = Summary { all_passed: report.all_passed(), cells: opts.cells, report: &report };
    out.write("summary.json", &to_json(&summary).compute()?).input()?;
    let (branches, folds) = diagram_csvs(&report.diagram).compute()?;
    out.write("branches.csv", &branches).input()?;
    out.write("folds.csv", &folds).input()?;
    for s in &report.scenarios {
        out.write(&format!("trajectory_{}.csv", s.name), &trajectory_csv(&s.trajectory).compute()?).input()?;
    }

    for c in &report.criteria {
        println!("criterion {} {}: {}", c.id, c.title, if c.passed { "PASS" } else { "FAIL" });
        for line in c.checks.iter().filter(|_| !c.passed) {
            println!("    {line}");
        }
    }
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Assertion(failed));
    }
    Ok(())
}
