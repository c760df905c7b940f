//! Discrete Neumann Laplacian and the shifted tridiagonal solve of the
//! linearly implicit stepper.
//!
//! Rows are scaled so that summation by parts holds for every pair of vectors:
//!
//! ```text
//! (A v)_0 = (v_1 - v_0) / h^2
//! (A v)_k = (v_{k+1} - 2 v_k + v_{k-1}) / h^2,   1 <= k <= n-1
//! (A v)_n = (v_{n-1} - v_n) / h^2
//! h * sum_{k=0}^{n} (A v)_k u_k = -(1/h) * sum_{k=1}^{n} (v_k - v_{k-1}) (u_k - u_{k-1})
//! ```

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// Writes `A v` into `out`. Both slices have `n + 1` entries.
pub(crate) fn laplacian_into(v: &[f64], h: f64, out: &mut [f64]) {
    let n = v.len() - 1;
    let inv_h2 = 1.0 / (h * h);
    out[0] = (v[1] - v[0]) * inv_h2;
    for k in 1..n {
        out[k] = (v[k + 1] - 2.0 * v[k] + v[k - 1]) * inv_h2;
    }
    out[n] = (v[n - 1] - v[n]) * inv_h2;
}

pub fn apply_laplacian(v: &GridFunction) -> GridFunction {
    let mut out = vec![0.0; v.values().len()];
    laplacian_into(v.values(), v.grid().spacing(), &mut out);
    GridFunction::from_raw(*v.grid(), out)
}

/// `h <A v, u> + (1/h) sum (v_k - v_{k-1})(u_k - u_{k-1})`; zero up to rounding.
pub fn sbp_defect(v: &GridFunction, u: &GridFunction) -> Result<f64> {
    v.ensure_same_grid(u)?;
    let h = v.grid().spacing();
    let av = apply_laplacian(v);
    let lhs: f64 = h * av
        .values()
        .iter()
        .zip(u.values())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let rhs: f64 = v
        .values()
        .windows(2)
        .zip(u.values().windows(2))
        .map(|(a, b)| (a[1] - a[0]) * (b[1] - b[0]))
        .sum::<f64>()
        / h;
    Ok(lhs + rhs)
}

/// Factored `I - mu A` for a fixed grid, reusable across time steps.
///
/// The matrix is strictly diagonally dominant for `mu > 0`, so elimination
/// runs without pivoting.
#[derive(Debug, Clone)]
pub struct ShiftedLaplacianSolver {
    off: f64,
    // Modified super-diagonal and inverse pivots of the forward sweep.
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl ShiftedLaplacianSolver {
    pub fn new(grid: &Grid, mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Parameter(format!(
                "shift must be finite and >= 0, got {mu}"
            )));
        }
        let n = grid.n();
        let h = grid.spacing();
        let off = -mu / (h * h);
        let diag = |k: usize| {
            if k == 0 || k == n {
                1.0 - off
            } else {
                1.0 - 2.0 * off
            }
        };
        let mut upper = vec![0.0; n + 1];
        let mut inv_pivot = vec![0.0; n + 1];
        let mut pivot = diag(0);
        inv_pivot[0] = 1.0 / pivot;
        upper[0] = off * inv_pivot[0];
        for k in 1..=n {
            pivot = diag(k) - off * upper[k - 1];
            inv_pivot[k] = 1.0 / pivot;
            upper[k] = if k < n { off * inv_pivot[k] } else { 0.0 };
        }
        Ok(Self {
            off,
            upper,
            inv_pivot,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len() - 1;
        x[0] *= self.inv_pivot[0];
        for k in 1..=n {
            x[k] = (x[k] - self.off * x[k - 1]) * self.inv_pivot[k];
        }
        for k in (0..n).rev() {
            x[k] -= self.upper[k] * x[k + 1];
        }
    }
}

/// Solves `(I - mu A) x = rhs`.
pub fn solve_shifted_tridiagonal(mu: f64, rhs: &GridFunction) -> Result<GridFunction> {
    if !rhs.is_finite() {
        return Err(Error::Input("right-hand side is not finite".into()));
    }
    let solver = ShiftedLaplacianSolver::new(rhs.grid(), mu)?;
    let mut x = rhs.values().to_vec();
    solver.solve_in_place(&mut x);
    Ok(GridFunction::from_raw(*rhs.grid(), x))
}
