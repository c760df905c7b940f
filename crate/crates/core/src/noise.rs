//! Colored Gaussian noise on the grid.
//!
//! A covariance kernel `q(xi, zeta)` is replaced by its cell averages
//!
//! ```text
//! qn[k][l] = (1/h^2) * int_{cell k} int_{cell l} q(xi, zeta) dzeta dxi,   1 <= k, l <= n
//! qn[0][l] = 0
//! ```
//!
//! and the increment at node `k` over a step of length `dt` is
//! `sqrt(h dt) * sum_{l=1}^{n} qn[k][l] z_l` with independent standard normals
//! `z_l`, one per cell. Cell `k` is `[(k-1)h, kh]`, so node `n` receives noise
//! and node 0 does not.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::quadrature::GaussLegendre;

type KernelFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A covariance factor `q` with `(Q v)(xi) = int int q(xi, zeta) q(rho, zeta) v(rho)`.
#[derive(Clone)]
pub struct CovarianceKernel {
    name: String,
    params: BTreeMap<String, f64>,
    /// Regularity tag; carried as metadata only.
    pub theta_hint: f64,
    eval: Arc<KernelFn>,
}

impl fmt::Debug for CovarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceKernel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("theta_hint", &self.theta_hint)
            .finish()
    }
}

impl CovarianceKernel {
    pub fn from_fn<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
            theta_hint: 0.75,
            eval: Arc::new(f),
        }
    }

    fn with_params(mut self, params: &[(&str, f64)]) -> Self {
        self.params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::from_fn("constant", move |_, _| c).with_params(&[("sigma", c)])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `sigma * exp(-(xi - zeta)^2 / (2 corr_length^2))`.
    pub fn gaussian(sigma: f64, corr_length: f64) -> Self {
        let two_l2 = 2.0 * corr_length * corr_length;
        Self::from_fn("gaussian", move |x, y| {
            sigma * (-(x - y).powi(2) / two_l2).exp()
        })
        .with_params(&[("sigma", sigma), ("corr_length", corr_length)])
    }

    /// `sigma * exp(-|xi - zeta| / corr_length)`.
    pub fn exponential(sigma: f64, corr_length: f64) -> Self {
        let mut k = Self::from_fn("exponential", move |x, y| {
            sigma * (-(x - y).abs() / corr_length).exp()
        })
        .with_params(&[("sigma", sigma), ("corr_length", corr_length)]);
        k.theta_hint = 0.5;
        k
    }

    /// Registry lookup: `zero`, `constant` (sigma), `gaussian` and
    /// `exponential` (sigma, corr_length).
    pub fn from_registry(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str| {
            params
                .get(key)
                .copied()
                .ok_or_else(|| Error::Config(format!("kernel `{name}` needs parameter `{key}`")))
        };
        let positive = |key: &str| {
            let v = get(key)?;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Config(format!(
                    "kernel parameter `{key}` must be positive"
                )))
            }
        };
        match name {
            "zero" => Ok(Self::zero()),
            "constant" => Ok(Self::constant(get("sigma")?)),
            "gaussian" => Ok(Self::gaussian(get("sigma")?, positive("corr_length")?)),
            "exponential" => Ok(Self::exponential(get("sigma")?, positive("corr_length")?)),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn eval(&self, xi: f64, zeta: f64) -> f64 {
        (self.eval)(xi, zeta)
    }
}

/// Cell-averaged kernel matrix on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteNoise {
    grid: Grid,
    // Row-major (n + 1) x n; column j holds cell l = j + 1.
    qn: Vec<f64>,
    trace_q: f64,
}

impl DiscreteNoise {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Entry `qn[k][l]` for node `k` in `0..=n` and cell `l` in `1..=n`.
    pub fn entry(&self, k: usize, l: usize) -> f64 {
        assert!(l >= 1 && l <= self.grid.n(), "cell index {l} out of range");
        self.qn[k * self.grid.n() + (l - 1)]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.grid.n();
        &self.qn[k * n..(k + 1) * n]
    }

    /// `tr Q = ||q||^2_{L^2((0,L)^2)}`.
    pub fn trace_q(&self) -> f64 {
        self.trace_q
    }

    /// Correlated increments from explicit standard normals `z` (length `n`).
    pub fn increments_from_normals(&self, z: &[f64], dt: f64, out: &mut [f64]) {
        let n = self.grid.n();
        debug_assert_eq!(z.len(), n);
        debug_assert_eq!(out.len(), n + 1);
        let scale = (self.grid.spacing() * dt).sqrt();
        out[0] = 0.0;
        for (slot, row) in out[1..].iter_mut().zip(self.qn[n..].chunks_exact(n)) {
            *slot = scale * row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Draws `n` normals from `rng` (cell order `l = 1..n`) and returns the
    /// increment vector over a step of length `dt`.
    pub fn sample_increments<S: NormalSource + ?Sized>(&self, dt: f64, rng: &mut S) -> Vec<f64> {
        let z: Vec<f64> = (0..self.grid.n()).map(|_| rng.next_normal()).collect();
        let mut out = vec![0.0; self.grid.node_count()];
        self.increments_from_normals(&z, dt, &mut out);
        out
    }

    /// Exact covariance `h dt qn qn^T` of the increment vector.
    pub fn increment_covariance(&self, dt: f64) -> Vec<Vec<f64>> {
        let size = self.grid.node_count();
        let scale = self.grid.spacing() * dt;
        (0..size)
            .map(|k| {
                (0..size)
                    .map(|j| {
                        scale
                            * self
                                .row(k)
                                .iter()
                                .zip(self.row(j))
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    /// `k,l,value` rows for inspection.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,l,value\n");
        let n = self.grid.n();
        for k in 0..=n {
            for l in 1..=n {
                let _ = writeln!(out, "{k},{l},{:.16e}", self.entry(k, l));
            }
        }
        out
    }
}

pub fn discretize_kernel(
    kernel: &CovarianceKernel,
    grid: &Grid,
    quad_order: usize,
) -> Result<DiscreteNoise> {
    let rule = GaussLegendre::new(quad_order)?;
    let n = grid.n();
    let h = grid.spacing();
    // Quadrature points of every cell, flattened cell by cell.
    let points: Vec<(f64, f64)> = (0..n)
        .flat_map(|c| {
            let a = grid.node(c);
            let b = grid.node(c + 1);
            rule.on_interval(a, b).collect::<Vec<_>>()
        })
        .collect();
    let per_cell = rule.order();
    let mut qn = vec![0.0; (n + 1) * n];
    let mut trace_q = 0.0;
    for kc in 0..n {
        for lc in 0..n {
            let mut avg = 0.0;
            let mut sq = 0.0;
            for &(x, wx) in &points[kc * per_cell..(kc + 1) * per_cell] {
                for &(y, wy) in &points[lc * per_cell..(lc + 1) * per_cell] {
                    let q = kernel.eval(x, y);
                    avg += wx * wy * q;
                    sq += wx * wy * q * q;
                }
            }
            qn[(kc + 1) * n + lc] = avg / (h * h);
            trace_q += sq;
        }
    }
    if let Some(pos) = qn.iter().position(|x| !x.is_finite()) {
        return Err(Error::Kernel(format!(
            "kernel `{}` is not finite on cell pair ({}, {})",
            kernel.name(),
            pos / n,
            pos % n + 1
        )));
    }
    if !trace_q.is_finite() {
        return Err(Error::Kernel(format!(
            "kernel `{}` has infinite trace",
            kernel.name()
        )));
    }
    Ok(DiscreteNoise {
        grid: *grid,
        qn,
        trace_q,
    })
}

/// Coarse standard normals from fine ones: each coarse cell is the
/// normalized sum of its `r` fine cells, `(1/sqrt r) * sum_block z_fine`.
pub fn project_increments(fine: &[f64], r: usize) -> Result<Vec<f64>> {
    if r == 0 || !fine.len().is_multiple_of(r) {
        return Err(Error::Parameter(format!(
            "{} fine values cannot be grouped in blocks of {r}",
            fine.len()
        )));
    }
    let scale = 1.0 / (r as f64).sqrt();
    Ok(fine
        .chunks_exact(r)
        .map(|block| scale * block.iter().sum::<f64>())
        .collect())
}

/// A source of standard normal variates.
pub trait NormalSource {
    fn next_normal(&mut self) -> f64;
}

/// Seeded stream of standard normals for one trajectory.
///
/// The 256-bit ChaCha8 key is filled from a SplitMix64 sequence started at
/// `base_seed`, and the trajectory index selects the ChaCha stream, so
/// distinct indices never share keystream. Normals come from the
/// `rand_distr` ziggurat sampler.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl NormalSource for RandomStream {
    fn next_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// SplitMix64 output function.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_substream(base_seed: u64, index: u64) -> RandomStream {
    let mut state = base_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    RandomStream { rng }
}

/// Replays a fixed sequence of normals; panics when exhausted.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    values: Vec<f64>,
    pos: usize,
}

impl ReplaySource {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl NormalSource for ReplaySource {
    fn next_normal(&mut self) -> f64 {
        let z = self.values[self.pos];
        self.pos += 1;
        z
    }
}

/// Agreement between the empirical and exact increment covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub draws: usize,
    /// Fraction of entries (nodes `1..=n`) within `tol` relative error.
    pub fraction_within: f64,
    /// Same, with errors scaled by `sqrt(C_kk C_ll)` (correlation scale).
    pub fraction_within_correlation_scale: f64,
    pub max_relative_error: f64,
}

/// Draws `draws` increment vectors and compares their empirical covariance
/// with `h dt qn qn^T`.
pub fn covariance_check<S: NormalSource + ?Sized>(
    noise: &DiscreteNoise,
    dt: f64,
    draws: usize,
    tol: f64,
    rng: &mut S,
) -> CovarianceReport {
    let n = noise.grid().n();
    let exact = noise.increment_covariance(dt);
    let mut sum = vec![0.0; n];
    let mut prod = vec![0.0; n * n];
    for _ in 0..draws {
        let d = noise.sample_increments(dt, rng);
        for k in 0..n {
            sum[k] += d[k + 1];
            for l in 0..n {
                prod[k * n + l] += d[k + 1] * d[l + 1];
            }
        }
    }
    let m = draws as f64;
    let mut within = 0usize;
    let mut within_scaled = 0usize;
    let mut max_rel = 0.0f64;
    for k in 0..n {
        for l in 0..n {
            let emp = (prod[k * n + l] - sum[k] * sum[l] / m) / (m - 1.0);
            let ex = exact[k + 1][l + 1];
            let err = (emp - ex).abs();
            let rel = if ex != 0.0 {
                err / ex.abs()
            } else if err == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_rel = max_rel.max(rel);
            if rel <= tol {
                within += 1;
            }
            let scale = (exact[k + 1][k + 1] * exact[l + 1][l + 1]).sqrt();
            if err <= tol * scale {
                within_scaled += 1;
            }
        }
    }
    let total = (n * n) as f64;
    CovarianceReport {
        draws,
        fraction_within: within as f64 / total,
        fraction_within_correlation_scale: within_scaled as f64 / total,
        max_relative_error: max_rel,
    }
}
