//! Propagation-failure estimation for traveling pulses.
//!
//! A pulse is detected through `Phi(v) = int_0^L (v(xi) - v*) dxi`. A run counts
//! as a propagation failure when `Phi(v(t)) <= kappa - epsilon` for some
//! recorded `t` in `[T0, T]`. The estimate `p_hat` is the failure fraction
//! over independent runs, reported with the Chebyshev half-width
//!
//! ```text
//! gamma = (alpha m)^{-1/2} (1 + 4 C / (epsilon^2 n))^{1/2}
//! ```
//!
//! where `C` (`c_hat`) absorbs the unknown discretization constant.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::ReactionModel;
use crate::noise::{derive_substream, DiscreteNoise};
use crate::sim::{run_trajectory, SolverConfig, Trajectory};

/// Exact integral of the interpolant minus `L v*` (the trapezoid rule is exact
/// for piecewise-linear functions).
pub fn pulse_functional(v: &GridFunction, v_star: f64) -> f64 {
    pulse_functional_values(v.values(), v.grid().spacing(), v.grid().length(), v_star)
}

pub(crate) fn pulse_functional_values(values: &[f64], h: f64, length: f64, v_star: f64) -> f64 {
    let n = values.len() - 1;
    let interior: f64 = values[1..n].iter().sum();
    h * (interior + 0.5 * (values[0] + values[n])) - length * v_star
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureSpec {
    pub kappa: f64,
    pub epsilon: f64,
    pub observe_from: f64,
    /// Chebyshev level: the interval misses the true probability with
    /// probability at most `confidence_alpha`.
    pub confidence_alpha: f64,
    pub c_hat: f64,
    pub samples: usize,
}

impl FailureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::Parameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < self.kappa) {
            return Err(Error::Parameter(format!(
                "epsilon must lie in [0, kappa), got {}",
                self.epsilon
            )));
        }
        if !(self.confidence_alpha > 0.0 && self.confidence_alpha < 1.0) {
            return Err(Error::Parameter(
                "confidence alpha must lie in (0, 1)".into(),
            ));
        }
        if !(self.c_hat >= 0.0) {
            return Err(Error::Parameter("c_hat must be >= 0".into()));
        }
        if self.samples == 0 {
            return Err(Error::Parameter("at least one sample is required".into()));
        }
        if !(self.observe_from >= 0.0) {
            return Err(Error::Parameter("observation start must be >= 0".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.kappa - self.epsilon
    }
}

/// Minimum of the recorded pulse functional over `[t0, T]`.
pub fn min_phi_after(traj: &Trajectory, t0: f64) -> Result<f64> {
    if t0 > traj.horizon + 1e-12 * traj.horizon.max(1.0) {
        return Err(Error::Parameter(format!(
            "observation start {t0} lies beyond the trajectory horizon {}",
            traj.horizon
        )));
    }
    let tol = 1e-9 * traj.horizon.max(1.0);
    traj.times
        .iter()
        .zip(&traj.phi_series)
        .filter(|(t, _)| **t >= t0 - tol)
        .map(|(_, phi)| *phi)
        .reduce(f64::min)
        .ok_or_else(|| Error::Parameter(format!("no recorded instant at or after {t0}")))
}

/// True iff `Phi(v(t)) <= kappa - epsilon` at some recorded `t >= T0`.
pub fn failure_indicator(traj: &Trajectory, spec: &FailureSpec) -> Result<bool> {
    Ok(min_phi_after(traj, spec.observe_from)? <= spec.threshold())
}

/// Outcome of one Monte-Carlo sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleOutcome {
    Propagated {
        min_phi: f64,
    },
    Failed {
        min_phi: f64,
    },
    /// The trajectory overflowed at the given step; excluded from the estimate.
    Overflow {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEstimate {
    pub p_hat: f64,
    pub failures: usize,
    pub effective_samples: usize,
    pub overflows: usize,
    pub outcomes: Vec<SampleOutcome>,
}

/// Runs `spec.samples` independent trajectories, sample `i` driven by
/// `derive_substream(base_seed, i)`.
pub fn estimate_failure_probability<M: ReactionModel + ?Sized>(
    config: &SolverConfig,
    model: &M,
    noise: &DiscreteNoise,
    v0: &GridFunction,
    w0: &GridFunction,
    spec: &FailureSpec,
    base_seed: u64,
) -> Result<FailureEstimate> {
    spec.validate()?;
    config.validate()?;
    if spec.observe_from > config.horizon {
        return Err(Error::Parameter(format!(
            "observation start {} lies beyond the horizon {}",
            spec.observe_from, config.horizon
        )));
    }
    let outcomes = (0..spec.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_substream(base_seed, i as u64);
            match run_trajectory(config, model, noise, v0, w0, &mut rng) {
                Ok(traj) => {
                    let min_phi = min_phi_after(&traj, spec.observe_from)?;
                    Ok(if min_phi <= spec.threshold() {
                        SampleOutcome::Failed { min_phi }
                    } else {
                        SampleOutcome::Propagated { min_phi }
                    })
                }
                Err(Error::Overflow { step, .. }) => Ok(SampleOutcome::Overflow { step }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = outcomes
        .iter()
        .filter(|o| matches!(o, SampleOutcome::Failed { .. }))
        .count();
    let overflows = outcomes
        .iter()
        .filter(|o| matches!(o, SampleOutcome::Overflow { .. }))
        .count();
    let effective_samples = outcomes.len() - overflows;
    if overflows > 0 {
        log::warn!(
            "{overflows} of {} trajectories overflowed and were excluded",
            outcomes.len()
        );
    }
    let p_hat = if effective_samples > 0 {
        failures as f64 / effective_samples as f64
    } else {
        f64::NAN
    };
    Ok(FailureEstimate {
        p_hat,
        failures,
        effective_samples,
        overflows,
        outcomes,
    })
}

pub fn confidence_halfwidth(spec: &FailureSpec, n: usize) -> f64 {
    let mc = (spec.confidence_alpha * spec.samples as f64).powf(-0.5);
    // With c_hat = 0 the discretization term vanishes even at epsilon = 0.
    let discretization = if spec.c_hat == 0.0 {
        0.0
    } else {
        4.0 * spec.c_hat / (spec.epsilon * spec.epsilon * n as f64)
    };
    mc * (1.0 + discretization).sqrt()
}

/// `[p_hat - gamma, p_hat + gamma]` clipped to `[0, 1]`.
pub fn confidence_interval(p_hat: f64, gamma: f64) -> (f64, f64) {
    ((p_hat - gamma).max(0.0), (p_hat + gamma).min(1.0))
}
