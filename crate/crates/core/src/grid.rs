//! Uniform grids on `[0, L]`, nodal grid functions and the piecewise-linear
//! embedding of nodal vectors into functions on the interval.
//!
//! Norm conventions follow the discrete energy framework of the scheme:
//!
//! * [`GridFunction::lp_norm`] is the weighted power sum `h * sum_{k=1}^{n} |v_k|^p`.
//!   Node 0 is **excluded** and no root is taken.
//! * [`GridFunction::v_seminorm`] is `sqrt((1/h) * sum_{k=1}^{n} (v_k - v_{k-1})^2)`, the
//!   exact `H^1` seminorm of the linear interpolant.
//! * [`GridFunction::h_norm_interpolant`] is the exact `L^2(0, L)` norm of the linear
//!   interpolant, evaluated cell by cell in closed form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A uniform grid with `n` cells on `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    length: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("grid needs at least one cell".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Parameter(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n, length })
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        self.n + 1
    }

    /// Position of node `k`; the last node is exactly `length`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n {
            self.length
        } else {
            k as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |k| self.node(k))
    }

    /// The grid with `r` times as many cells on the same domain.
    pub fn refined(&self, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Parameter(
                "refinement factor must be at least 1".into(),
            ));
        }
        Grid::new(self.n * r, self.length)
    }

    /// Refinement factor `r` such that `fine == self.refined(r)`.
    pub fn refinement_factor(&self, fine: &Grid) -> Result<usize> {
        let same_length =
            (self.length - fine.length).abs() <= 1e-12 * self.length.abs().max(fine.length.abs());
        if !same_length {
            return Err(Error::Parameter(format!(
                "grids cover different domains ({} vs {})",
                self.length, fine.length
            )));
        }
        if !fine.n.is_multiple_of(self.n) {
            return Err(Error::Parameter(format!(
                "{} cells is not a refinement of {} cells",
                fine.n, self.n
            )));
        }
        Ok(fine.n / self.n)
    }
}

/// Nodal values of a scalar field on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Parameter(format!(
                "expected {} nodal values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Input(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.node_count()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    /// Samples `f` at every node.
    pub fn restrict<F: Fn(f64) -> f64>(f: F, grid: Grid) -> Result<Self> {
        let values = grid
            .nodes()
            .enumerate()
            .map(|(k, xi)| {
                let y = f(xi);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::Input(format!(
                        "function is not finite at node {k} (xi = {xi})"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, values })
    }

    /// Builds a grid function without the finiteness check; used by the steppers,
    /// which validate the state themselves and report the failing step.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// `h * sum_{k=1}^{n} |v_k|^p`. Node 0 does not contribute.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::Parameter(format!("lp_norm needs p >= 1, got {p}")));
        }
        let h = self.grid.spacing();
        let sum: f64 = if p == 2.0 {
            self.values[1..].iter().map(|x| x * x).sum()
        } else {
            self.values[1..].iter().map(|x| x.abs().powf(p)).sum()
        };
        Ok(h * sum)
    }

    pub fn v_seminorm(&self) -> f64 {
        let h = self.grid.spacing();
        let sum: f64 = self.values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        (sum / h).sqrt()
    }

    pub fn h_norm_interpolant(&self) -> f64 {
        let h = self.grid.spacing();
        let sum: f64 = self
            .values
            .windows(2)
            .map(|w| w[0] * w[0] + w[0] * w[1] + w[1] * w[1])
            .sum();
        (h / 3.0 * sum).sqrt()
    }

    /// Evaluates the piecewise-linear interpolant at `xi`.
    pub fn interpolate(&self, xi: f64) -> Result<f64> {
        let length = self.grid.length();
        if !(0.0..=length).contains(&xi) {
            return Err(Error::Domain { xi, length });
        }
        let n = self.grid.n();
        let s = xi / self.grid.spacing();
        let nearest = s.round();
        if (s - nearest).abs() <= 4.0 * f64::EPSILON * nearest.max(1.0) {
            return Ok(self.values[(nearest as usize).min(n)]);
        }
        let k = (s.floor() as usize).min(n - 1);
        let t = s - k as f64;
        Ok((1.0 - t) * self.values[k] + t * self.values[k + 1])
    }

    /// Nodal samples of the interpolant on the `r`-fold refined grid.
    pub fn refine_interpolant(&self, r: usize) -> Result<Self> {
        let fine = self.grid.refined(r)?;
        let mut values = Vec::with_capacity(fine.node_count());
        for w in self.values.windows(2) {
            for i in 0..r {
                values.push(((r - i) as f64 * w[0] + i as f64 * w[1]) / r as f64);
            }
        }
        values.push(self.values[self.grid.n()]);
        Ok(Self { grid: fine, values })
    }

    /// CSV with header `xi,value`, one row per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("xi,value\n");
        for (xi, v) in self.grid.nodes().zip(&self.values) {
            let _ = writeln!(out, "{xi:.16e},{v:.16e}");
        }
        out
    }

    pub fn from_csv(grid: Grid, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "xi,value" => {}
            other => {
                return Err(Error::Input(format!(
                    "expected header `xi,value`, found {other:?}"
                )))
            }
        }
        let values = lines
            .map(|line| {
                let field = line
                    .split(',')
                    .nth(1)
                    .ok_or_else(|| Error::Input(format!("malformed row `{line}`")))?;
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad value `{field}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, values)
    }

    pub(crate) fn ensure_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Parameter(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

/// Paired `(v, w)` fields at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub v: GridFunction,
    pub w: GridFunction,
}

impl SystemState {
    pub fn new(v: GridFunction, w: GridFunction) -> Result<Self> {
        v.ensure_same_grid(&w)?;
        Ok(Self { v, w })
    }

    pub fn grid(&self) -> &Grid {
        self.v.grid()
    }
}
