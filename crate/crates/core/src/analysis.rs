//! Strong-error measurement between resolutions.
//!
//! Coarse solutions are compared with a fine reference through their
//! piecewise-linear interpolants. Coarse and reference runs of one sample are
//! driven by the same white noise: the reference draws one standard normal
//! per fine cell and step, and each coarse run receives the normalized block
//! sums of those draws (see [`project_increments`]).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::SystemState;
use crate::model::ReactionModel;
use crate::noise::{
    derive_substream, discretize_kernel, project_increments, CovarianceKernel, NormalSource,
    ReplaySource,
};
use crate::quadrature::GaussLegendre;
use crate::sim::{run_trajectory, InitialCondition, SolverConfig};

/// `|| iota v_f - iota v_c ||` in `L^2 x L^2`, exact for piecewise-linear
/// interpolants: the coarse state is lifted to the fine grid first.
pub fn state_error(coarse: &SystemState, fine: &SystemState) -> Result<f64> {
    let r = coarse.grid().refinement_factor(fine.grid())?;
    let lifted_v = coarse.v.refine_interpolant(r)?;
    let lifted_w = coarse.w.refine_interpolant(r)?;
    let fine_grid = *fine.grid();
    let diff = |a: &[f64], b: &[f64]| -> Result<f64> {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok(crate::grid::GridFunction::new(fine_grid, d)?.h_norm_interpolant())
    };
    let ev = diff(fine.v.values(), lifted_v.values())?;
    let ew = diff(fine.w.values(), lifted_w.values())?;
    Ok((ev * ev + ew * ew).sqrt())
}

/// The shift functional
/// `I_n(phi) = ( sum_k int_{cell k} (phi'(z) - phi'(z - h))^2 + (phi'(z) - phi'(z + h))^2 dz )^{1/2}`
/// on `[0, length]` with `h = length / n`.
///
/// `dphi` is the weak derivative of `phi`. Shifted points leaving the domain
/// are reflected back; `phi` is extended evenly, so its derivative changes
/// sign under reflection. Each cell uses 8-point Gauss-Legendre quadrature.
pub fn i_n_functional<F: Fn(f64) -> f64>(dphi: F, n: usize, length: f64) -> f64 {
    let rule = GaussLegendre::new(8).expect("order 8 is valid");
    let h = length / n as f64;
    let extended = |x: f64| {
        if x < 0.0 {
            -dphi(-x)
        } else if x > length {
            -dphi(2.0 * length - x)
        } else {
            dphi(x)
        }
    };
    let mut total = 0.0;
    for k in 0..n {
        let a = k as f64 * h;
        let b = if k + 1 == n {
            length
        } else {
            (k + 1) as f64 * h
        };
        total += rule.integrate(a, b, |z| {
            let d = dphi(z);
            (d - extended(z - h)).powi(2) + (d - extended(z + h)).powi(2)
        });
    }
    total.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSpec {
    pub resolutions: Vec<usize>,
    pub reference: usize,
    pub samples: usize,
    pub seed: u64,
    /// Moment of the sup-in-time error averaged over samples (1, 2 or 4).
    pub p_norm: f64,
    pub quad_order: usize,
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Parameter("resolution ladder is empty".into()));
        }
        for &n in &self.resolutions {
            if n == 0 || !self.reference.is_multiple_of(n) || n >= self.reference {
                return Err(Error::Parameter(format!(
                    "resolution {n} does not divide the reference resolution {}",
                    self.reference
                )));
            }
        }
        if self.samples == 0 {
            return Err(Error::Parameter("at least one sample is required".into()));
        }
        if ![1.0, 2.0, 4.0].contains(&self.p_norm) {
            return Err(Error::Parameter(format!(
                "p must be 1, 2 or 4, got {}",
                self.p_norm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub error: f64,
    pub samples: usize,
    pub failures: usize,
}

/// For every sample, draws the fine-grid normals once, runs the reference and
/// each coarse resolution with projected normals, and records the sup over
/// recorded instants of [`state_error`]. Errors are averaged over samples in
/// the `p`-th moment. Samples with an overflowing run count as failures.
pub fn convergence_study<M: ReactionModel + ?Sized>(
    base: &SolverConfig,
    model: &M,
    kernel: &CovarianceKernel,
    init: &InitialCondition,
    spec: &ConvergenceSpec,
) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    let with_n = |n: usize| SolverConfig {
        n,
        snapshot_stride: base.record_stride,
        ..base.clone()
    };
    let reference_cfg = with_n(spec.reference);
    reference_cfg.validate()?;
    let steps = reference_cfg.step_count();

    struct Level {
        cfg: SolverConfig,
        noise: crate::noise::DiscreteNoise,
        state: SystemState,
        factor: usize,
    }
    let level = |n: usize| -> Result<Level> {
        let cfg = with_n(n);
        cfg.validate()?;
        let grid = cfg.grid()?;
        Ok(Level {
            noise: discretize_kernel(kernel, &grid, spec.quad_order)?,
            state: init.state(grid)?,
            factor: spec.reference / n,
            cfg,
        })
    };
    let reference = level(spec.reference)?;
    let coarse = spec
        .resolutions
        .iter()
        .map(|&n| level(n))
        .collect::<Result<Vec<_>>>()?;

    // Per sample: Some(sup errors per resolution) or None on overflow.
    let per_sample = (0..spec.samples)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<f64>>> {
            let mut rng = derive_substream(spec.seed, i as u64);
            let fine_normals: Vec<f64> = (0..steps * spec.reference)
                .map(|_| rng.next_normal())
                .collect();
            let run = |lvl: &Level, normals: Vec<f64>| {
                run_trajectory(
                    &lvl.cfg,
                    model,
                    &lvl.noise,
                    &lvl.state.v,
                    &lvl.state.w,
                    &mut ReplaySource::new(normals),
                )
            };
            let fine = match run(&reference, fine_normals.clone()) {
                Ok(t) => t,
                Err(Error::Overflow { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut sups = Vec::with_capacity(coarse.len());
            for lvl in &coarse {
                let mut projected = Vec::with_capacity(steps * lvl.cfg.n);
                for chunk in fine_normals.chunks_exact(spec.reference) {
                    projected.extend(project_increments(chunk, lvl.factor)?);
                }
                let traj = match run(lvl, projected) {
                    Ok(t) => t,
                    Err(Error::Overflow { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let mut sup = 0.0f64;
                for ((tc, sc), (tf, sf)) in traj.snapshots.iter().zip(&fine.snapshots) {
                    debug_assert_eq!(tc, tf);
                    sup = sup.max(state_error(sc, sf)?);
                }
                sups.push(sup);
            }
            Ok(Some(sups))
        })
        .collect::<Result<Vec<_>>>()?;

    let failures = per_sample.iter().filter(|s| s.is_none()).count();
    let successes: Vec<&Vec<f64>> = per_sample.iter().flatten().collect();
    if failures > 0 {
        log::warn!("{failures} of {} samples overflowed", spec.samples);
    }
    Ok(spec
        .resolutions
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let count = successes.len();
            let error = if count == 0 {
                f64::NAN
            } else {
                let mean = successes
                    .iter()
                    .map(|s| s[j].powf(spec.p_norm))
                    .sum::<f64>()
                    / count as f64;
                mean.powf(1.0 / spec.p_norm)
            };
            ConvergenceRow {
                n,
                error,
                samples: count,
                failures,
            }
        })
        .collect())
}

/// Least-squares line through `(ln n, ln error)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    /// Negated slope; positive when errors decrease with `n`.
    pub order: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_order(table: &[(usize, f64)]) -> Result<OrderFit> {
    let points: Vec<(f64, f64)> = table
        .iter()
        .filter_map(|&(n, e)| {
            if e > 0.0 && e.is_finite() && n > 0 {
                Some(((n as f64).ln(), e.ln()))
            } else {
                log::warn!("dropping row (n = {n}, error = {e}) from the order fit");
                None
            }
        })
        .collect();
    if points.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least two rows with positive error, have {}",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all rows share one resolution".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(OrderFit {
        order: -slope,
        intercept,
        r_squared,
    })
}
