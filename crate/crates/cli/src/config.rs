//! Run configuration files.
//!
//! ```toml
//! [model]
//! family = "example"        # or give m, beta, mu and gamma
//! # m = 6.0
//! # beta = "P^2*exp(-P)*(s*exp(-s) + 0.5)"
//! # mu = "1"
//! # gamma = "1"
//!
//! [inflow]
//! C = 0.2
//!
//! [grid]
//! N = 1024
//!
//! [numerics]
//! panels = 4096
//! abs_tol = 1e-10
//!
//! [sim]
//! cfl = 0.9
//! T = 100.0
//! output_every = 1.0
//! ```
//!
//! Every section and key is optional; missing values fall back to the
//! built-in example at `C = 0` with the library defaults.

use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use structpop::numerics::Quadrature;
use structpop::{builtin_example, ModelIngredients, Numerics};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub inflow: InflowSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub sim: SimSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Option<String>,
    pub m: Option<f64>,
    pub beta: Option<String>,
    pub mu: Option<String>,
    pub gamma: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowSection {
    #[serde(rename = "C")]
    pub c: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub panels: Option<usize>,
    pub abs_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub cfl: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub output_every: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn model(&self) -> anyhow::Result<ModelIngredients> {
        let s = &self.model;
        let rates = [&s.beta, &s.mu, &s.gamma];
        match s.family.as_deref() {
            Some("example") | None if rates.iter().all(|r| r.is_none()) && s.m.is_none() => Ok(builtin_example()),
            Some("example") => bail!("[model] family = \"example\" takes no other keys"),
            Some(other) => bail!("unknown model family `{other}` (the only family is \"example\")"),
            None => {
                let m = s.m.context("[model] needs m")?;
                let [beta, mu, gamma] = rates.map(|r| r.as_deref());
                let (Some(beta), Some(mu), Some(gamma)) = (beta, mu, gamma) else {
                    bail!("[model] needs beta, mu and gamma");
                };
                let expr = |name: &str, text: &str| {
                    structpop::expr::parse_rate(text).with_context(|| format!("[model] {name} = \"{text}\""))
                };
                let model = ModelIngredients::from_exprs(m, expr("beta", beta)?, expr("mu", mu)?, expr("gamma", gamma)?)?;
                Ok(model)
            }
        }
    }

    pub fn numerics(&self, cells_override: Option<usize>) -> anyhow::Result<Numerics> {
        let mut num = Numerics::default();
        if let Some(panels) = self.numerics.panels {
            num.quadrature = Quadrature::new(panels)?;
        }
        if let Some(tol) = self.numerics.abs_tol {
            num.roots.abs_tol = tol;
        }
        if let Some(n) = cells_override.or(self.grid.n) {
            num.grid_cells = n;
        }
        num.validate()?;
        Ok(num)
    }

    pub fn inflow(&self, c_override: Option<f64>) -> anyhow::Result<f64> {
        let c = c_override.or(self.inflow.c).unwrap_or(0.0);
        if !(c >= 0.0 && c.is_finite()) {
            bail!("C must be finite and nonnegative, got {c}");
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_example() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.model().unwrap().m(), 6.0);
        assert_eq!(cfg.inflow(None).unwrap(), 0.0);
        assert_eq!(cfg.numerics(None).unwrap(), Numerics::default());
    }

    #[test]
    fn expression_model() {
        let cfg = RunConfig::parse(
            "[model]\nm = 4\nbeta = \"2*exp(-P)\"\nmu = \"1\"\ngamma = \"1 + s\"\n[inflow]\nC = 0.5\n[grid]\nN = 64",
        )
        .unwrap();
        let model = cfg.model().unwrap();
        assert_eq!(model.m(), 4.0);
        assert!((model.beta(0.0, 1.0) - 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(cfg.inflow(None).unwrap(), 0.5);
        assert_eq!(cfg.inflow(Some(0.1)).unwrap(), 0.1);
        assert_eq!(cfg.numerics(None).unwrap().grid_cells, 64);
        assert_eq!(cfg.numerics(Some(8)).unwrap().grid_cells, 8);
    }

    #[test]
    fn rejects_unknown_keys_and_partial_models() {
        assert!(RunConfig::parse("[model]\nfamly = \"example\"").is_err());
        let cfg = RunConfig::parse("[model]\nm = 4\nbeta = \"1\"").unwrap();
        assert!(cfg.model().is_err());
        assert!(RunConfig::parse("[inflow]\nC = -1").unwrap().inflow(None).is_err());
    }

    #[test]
    fn parse_errors_carry_the_offset() {
        let cfg = RunConfig::parse("[model]\nm = 4\nbeta = \"2*exp(-P\"\nmu = \"1\"\ngamma = \"1\"").unwrap();
        let err = format!("{:#}", cfg.model().unwrap_err());
        assert!(err.contains("byte"), "{err}");
    }
}
