//! Browser bindings for the `www/` demo page.
//!
//! Every method returns a JSON string; errors come back as a JS string
//! exception. The `*_json` functions hold the logic so they can be tested natively.

// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use structpop::equilibrium::{find_equilibria, net_growth};
use structpop::numerics::Quadrature;
use structpop::simulator::{simulate, SimulationConfig, SimulationState};
use structpop::{builtin_example, ModelIngredients, Numerics};
use wasm_bindgen::prelude::*;

/// Coarser than the library defaults so a slider drag stays interactive.
fn demo_numerics() -> Numerics {
    let mut num = Numerics {
        quadrature: Quadrature::new(512).expect("positive panel count"),
        population_window: (1e-3, 12.0),
        ..Numerics::default()
    };
    num.roots.scan_points = 600;
    num
}

#[derive(Serialize)]
struct Curve {
    p: Vec<f64>,
    q: Vec<f64>,
    equilibria: Vec<Equilibrium>,
}

#[derive(Serialize)]
struct Equilibrium {
    p_star: f64,
    dq: f64,
    /// Sign test `Q'(P*) < 0` only; the positivity conditions are not checked.
    stable: bool,
}

#[derive(Serialize)]
struct Diagram {
    c: Vec<f64>,
    points: Vec<Vec<Equilibrium>>,
}

#[derive(Serialize)]
struct Run {
    t: Vec<f64>,
    p: Vec<f64>,
    s: Vec<f64>,
    density: Vec<f64>,
}

#[wasm_bindgen]
pub struct Explorer {
    model: ModelIngredients,
    num: Numerics,
}

impl Explorer {
    pub fn example() -> Self {
        Self { model: builtin_example(), num: demo_numerics() }
    }

    pub fn from_rates(m: f64, beta: &str, mu: &str, gamma: &str) -> Result<Self, String> {
        let model = ModelIngredients::from_expressions(m, beta, mu, gamma).map_err(|e| e.to_string())?;
        Ok(Self { model, num: demo_numerics() })
    }

    fn equilibria(&self, c: f64) -> Result<Vec<Equilibrium>, String> {
        let set = find_equilibria(&self.model, c, &self.num).map_err(|e| e.to_string())?;
        Ok(set.points.iter().map(|e| Equilibrium { p_star: e.p_star, dq: e.dq, stable: e.dq < 0.0 }).collect())
    }

    pub fn curve_json(&self, c: f64, p_max: f64, points: usize) -> Result<String, String> {
        if !(p_max > 0.0) || points < 2 {
            return Err("need p_max > 0 and at least two points".into());
        }
        let q = &self.num.quadrature;
        let p: Vec<f64> = (1..=points).map(|k| p_max * k as f64 / points as f64).collect();
        let values = p.iter().map(|&x| net_growth(&self.model, c, x, q)).collect::<Result<Vec<_>, _>>();
        let curve = Curve { q: values.map_err(|e| e.to_string())?, p, equilibria: self.equilibria(c)? };
        serde_json::to_string(&curve).map_err(|e| e.to_string())
    }

    pub fn diagram_json(&self, c_lo: f64, c_hi: f64, steps: usize) -> Result<String, String> {
        if steps == 0 || !(c_lo >= 0.0 && c_lo < c_hi) {
            return Err("need 0 <= C_lo < C_hi and steps >= 1".into());
        }
        let c: Vec<f64> = (0..=steps).map(|k| c_lo + (c_hi - c_lo) * k as f64 / steps as f64).collect();
        let points = c.iter().map(|&x| self.equilibria(x)).collect::<Result<Vec<_>, _>>()?;
        serde_json::to_string(&Diagram { c, points }).map_err(|e| e.to_string())
    }

    pub fn simulate_json(&self, c: f64, amplitude: f64, decay: f64, t_final: f64, cells: usize) -> Result<String, String> {
        let err = |e: structpop::Error| e.to_string();
        let initial = SimulationState::from_fn(&self.model, c, cells, |s| amplitude * (-decay * s).exp()).map_err(err)?;
        let mut cfg = SimulationConfig::new(c, cells, t_final);
        cfg.output_every = (t_final / 400.0).max(0.01);
        let tr = simulate(&self.model, &cfg, initial).map_err(err)?;
        let run = Run {
            t: tr.times(),
            p: tr.totals(),
            s: tr.final_state.abscissae(),
            density: tr.final_state.density(),
        };
        serde_json::to_string(&run).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Explorer {
    /// The built-in example, or a model from rate expressions when `beta` is non-empty.
    #[wasm_bindgen(constructor)]
    pub fn new(m: f64, beta: &str, mu: &str, gamma: &str) -> Result<Explorer, JsValue> {
        if beta.trim().is_empty() {
            Ok(Self::example())
        } else {
            Self::from_rates(m, beta, mu, gamma).map_err(|e| JsValue::from_str(&e))
        }
    }

    /// `Q_C(P)` on `(0, p_max]` and the equilibria at `C`.
    pub fn curve(&self, c: f64, p_max: f64, points: usize) -> Result<String, JsValue> {
        self.curve_json(c, p_max, points).map_err(|e| JsValue::from_str(&e))
    }

    /// Equilibria across a sweep of `C`.
    pub fn diagram(&self, c_lo: f64, c_hi: f64, steps: usize) -> Result<String, JsValue> {
        self.diagram_json(c_lo, c_hi, steps).map_err(|e| JsValue::from_str(&e))
    }

    /// `P(t)` from the initial density `amplitude * exp(-decay * s)`, plus the final density.
    pub fn simulate(&self, c: f64, amplitude: f64, decay: f64, t_final: f64, cells: usize) -> Result<String, JsValue> {
        self.simulate_json(c, amplitude, decay, t_final, cells).map_err(|e| JsValue::from_str(&e))
    }
}
