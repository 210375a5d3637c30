//! Numerical settings shared by the analysis modules.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Quadrature, RootScanConfig};

/// Uniform size grid `s_i = i m / N`, `i = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeGrid {
    m: f64,
    cells: usize,
}

impl SizeGrid {
    pub fn new(m: f64, cells: usize) -> Result<Self> {
        if cells == 0 || !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidConfig(format!("size grid needs N >= 1 and m > 0 (N = {cells}, m = {m})")));
        }
        Ok(Self { m, cells })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.m / self.cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.cells {
            self.m
        } else {
            i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.cells).map(|i| self.node(i)).collect()
    }
}

/// Every tolerance and discretisation knob of the analysis modules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Numerics {
    pub quadrature: Quadrature,
    pub roots: RootScanConfig,
    /// Cell count of the size grid used for sampled profiles.
    pub grid_cells: usize,
    /// Half-width of the band around `Q'_C = 0` treated as marginal.
    pub tol_margin: f64,
    /// Scan window for real eigenvalues.
    pub lambda_window: (f64, f64),
    /// Scan window for positive equilibria.
    pub population_window: (f64, f64),
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            quadrature: Quadrature::default(),
            roots: RootScanConfig::default(),
            grid_cells: 1024,
            tol_margin: 1e-7,
            lambda_window: (-5.0, 20.0),
            population_window: (1e-4, 50.0),
        }
    }
}

impl Numerics {
    pub fn with_population_max(mut self, p_hi: f64) -> Self {
        self.population_window.1 = p_hi;
        self
    }

    pub fn size_grid(&self, m: f64) -> Result<SizeGrid> {
        SizeGrid::new(m, self.grid_cells)
    }

    pub fn validate(&self) -> Result<()> {
        self.roots.validate()?;
        let (lo, hi) = self.population_window;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::InvalidConfig(format!("population window must satisfy 0 < lo < hi, got ({lo}, {hi})")));
        }
        let (l0, l1) = self.lambda_window;
        if !(l0 < l1) {
            return Err(Error::InvalidConfig(format!("lambda window ({l0}, {l1}) is empty")));
        }
        if !(self.tol_margin >= 0.0) {
            return Err(Error::InvalidConfig("tol_margin must be nonnegative".into()));
        }
        if self.grid_cells == 0 {
            return Err(Error::InvalidConfig("grid N must be positive".into()));
        }
        Ok(())
    }
}
