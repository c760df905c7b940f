//! Time stepping of the semi-discrete system
//!
//! ```text
//! dv = [A v + phi1(v, w)] dt + b(v) dW^n
//! dw = phi2(v, w) dt
//! ```
//!
//! Three steppers are available:
//!
//! * `explicit`: plain Euler-Maruyama.
//! * `tamed_explicit`: the full drift `F = A v + phi1` enters as
//!   `dt F / (1 + dt ||F||)` with the `h`-weighted Euclidean norm.
//! * `semi_implicit`: `(I - dt A) v+ = v + dt phi1 / (1 + dt |phi1|) + b dW`,
//!   taming the reaction node by node.
//!
//! `w` is always advanced explicitly from the old state. Both explicit
//! variants require `dt <= h^2 / 2`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SystemState};
use crate::mc::pulse_functional_values;
use crate::model::ReactionModel;
use crate::noise::{DiscreteNoise, NormalSource};
use crate::operators::{laplacian_into, ShiftedLaplacianSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    TamedExplicit,
    #[default]
    SemiImplicit,
    Explicit,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::TamedExplicit => "tamed_explicit",
            Scheme::SemiImplicit => "semi_implicit",
            Scheme::Explicit => "explicit",
        }
    }

    pub fn needs_cfl(&self) -> bool {
        !matches!(self, Scheme::SemiImplicit)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tamed_explicit" => Ok(Scheme::TamedExplicit),
            "semi_implicit" => Ok(Scheme::SemiImplicit),
            "explicit" => Ok(Scheme::Explicit),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected tamed_explicit, semi_implicit or explicit)"
            ))),
        }
    }
}

/// Tamed reaction increment `dt f / (1 + dt |f|)`; its magnitude is below 1.
pub fn tamed_reaction(dt: f64, f: f64) -> f64 {
    dt * f / (1.0 + dt * f.abs())
}

fn check_cfl(scheme: Scheme, dt: f64, h: f64) -> Result<()> {
    let bound = 0.5 * h * h;
    if scheme.needs_cfl() && dt > bound {
        return Err(Error::Config(format!(
            "{scheme} scheme needs dt <= h^2/2 = {bound:e} (CFL bound), got dt = {dt:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Start of the observation window for the pulse functional.
    pub observe_from: f64,
    pub scheme: Scheme,
    pub record_stride: usize,
    /// Store a full state every this many steps; 0 disables snapshots.
    pub snapshot_stride: usize,
}

impl SolverConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.length).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be >= 0, got {}",
                self.horizon
            )));
        }
        if !(self.observe_from >= 0.0 && self.observe_from <= self.horizon) {
            return Err(Error::Config(format!(
                "observation start {} must lie in [0, {}]",
                self.observe_from, self.horizon
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        check_cfl(self.scheme, self.dt, grid.spacing())
    }

    /// `ceil(T / dt)`, treating ratios within 1e-9 of an integer as exact.
    pub fn step_count(&self) -> usize {
        let ratio = self.horizon / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

/// Reusable per-trajectory workspace for one grid, step size and scheme.
#[derive(Debug)]
pub struct Stepper<'m, M: ReactionModel + ?Sized> {
    model: &'m M,
    scheme: Scheme,
    dt: f64,
    h: f64,
    xi: Vec<f64>,
    solver: Option<ShiftedLaplacianSolver>,
    lap: Vec<f64>,
    next_v: Vec<f64>,
}

impl<'m, M: ReactionModel + ?Sized> Stepper<'m, M> {
    pub fn new(model: &'m M, grid: &Grid, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        check_cfl(scheme, dt, grid.spacing())?;
        let solver = match scheme {
            Scheme::SemiImplicit => Some(ShiftedLaplacianSolver::new(grid, dt)?),
            _ => None,
        };
        let size = grid.node_count();
        Ok(Self {
            model,
            scheme,
            dt,
            h: grid.spacing(),
            xi: grid.nodes().collect(),
            solver,
            lap: vec![0.0; size],
            next_v: vec![0.0; size],
        })
    }

    /// Advances `(v, w)` in place by one step with noise increments `dw`.
    /// Returns `false` if the new state is not finite.
    pub fn advance(&mut self, v: &mut [f64], w: &mut [f64], dw: &[f64]) -> bool {
        let dt = self.dt;
        let model = self.model;
        let size = v.len();
        match self.scheme {
            Scheme::Explicit => {
                laplacian_into(v, self.h, &mut self.lap);
                for k in 0..size {
                    let x = self.xi[k];
                    let f1 = model.phi1(x, v[k], w[k]);
                    self.next_v[k] =
                        v[k] + dt * (self.lap[k] + f1) + model.diffusion(x, v[k]) * dw[k];
                }
            }
            Scheme::TamedExplicit => {
                laplacian_into(v, self.h, &mut self.lap);
                let mut norm_sq = 0.0;
                for k in 0..size {
                    self.lap[k] += model.phi1(self.xi[k], v[k], w[k]);
                    norm_sq += self.lap[k] * self.lap[k];
                }
                let factor = dt / (1.0 + dt * (self.h * norm_sq).sqrt());
                for k in 0..size {
                    self.next_v[k] =
                        v[k] + factor * self.lap[k] + model.diffusion(self.xi[k], v[k]) * dw[k];
                }
            }
            Scheme::SemiImplicit => {
                for k in 0..size {
                    let x = self.xi[k];
                    let f1 = model.phi1(x, v[k], w[k]);
                    self.next_v[k] =
                        v[k] + tamed_reaction(dt, f1) + model.diffusion(x, v[k]) * dw[k];
                }
                if let Some(solver) = &self.solver {
                    solver.solve_in_place(&mut self.next_v);
                }
            }
        }
        let mut finite = true;
        for k in 0..size {
            w[k] += dt * model.phi2(self.xi[k], v[k], w[k]);
            finite &= w[k].is_finite() && self.next_v[k].is_finite();
        }
        v.copy_from_slice(&self.next_v);
        finite
    }
}

/// One step of the chosen scheme from `state` with noise increments `dw`.
pub fn step<M: ReactionModel + ?Sized>(
    state: &SystemState,
    model: &M,
    dw: &[f64],
    dt: f64,
    scheme: Scheme,
) -> Result<SystemState> {
    let grid = *state.grid();
    if dw.len() != grid.node_count() {
        return Err(Error::Parameter(format!(
            "increment vector has {} entries, grid has {} nodes",
            dw.len(),
            grid.node_count()
        )));
    }
    let mut stepper = Stepper::new(model, &grid, dt, scheme)?;
    let mut v = state.v.values().to_vec();
    let mut w = state.w.values().to_vec();
    if !stepper.advance(&mut v, &mut w, dw) {
        return Err(Error::Overflow {
            step: 1,
            scheme: scheme.name().into(),
        });
    }
    Ok(SystemState {
        v: GridFunction::from_raw(grid, v),
        w: GridFunction::from_raw(grid, w),
    })
}

/// Energy quantities at a recorded instant: `l2(v)`, `l2(w)` and the running
/// left-endpoint integrals of `||v||_n^2` and `l_{m+1}(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub l2_v: f64,
    pub l2_w: f64,
    pub gradient_integral: f64,
    pub power_integral: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phi_series: Vec<f64>,
    pub min_phi_after_t0: f64,
    pub snapshots: Vec<(f64, SystemState)>,
    pub energy: Vec<EnergyRecord>,
    pub horizon: f64,
    pub observe_from: f64,
}

impl Trajectory {
    pub fn final_energy(&self) -> &EnergyRecord {
        self.energy
            .last()
            .expect("a trajectory always has its initial record")
    }
}

fn l2_weighted(values: &[f64], h: f64) -> f64 {
    h * values[1..].iter().map(|x| x * x).sum::<f64>()
}

fn power_weighted(values: &[f64], h: f64, p: f64) -> f64 {
    h * values[1..].iter().map(|x| x.abs().powf(p)).sum::<f64>()
}

fn gradient_sq(values: &[f64], h: f64) -> f64 {
    values
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum::<f64>()
        / h
}

/// Marches `ceil(T/dt)` steps, drawing `n` normals per step from `rng`.
pub fn run_trajectory<M, S>(
    config: &SolverConfig,
    model: &M,
    noise: &DiscreteNoise,
    v0: &GridFunction,
    w0: &GridFunction,
    rng: &mut S,
) -> Result<Trajectory>
where
    M: ReactionModel + ?Sized,
    S: NormalSource + ?Sized,
{
    config.validate()?;
    let grid = config.grid()?;
    if *noise.grid() != grid || *v0.grid() != grid || *w0.grid() != grid {
        return Err(Error::Parameter(
            "initial data, noise and solver config must share one grid".into(),
        ));
    }
    let h = grid.spacing();
    let length = grid.length();
    let n = grid.n();
    let m_plus_1 = model.constants().growth_exponent + 1.0;
    let v_star = model.rest_level();
    let steps = config.step_count();
    let dt = config.dt;
    let t0_tol = 1e-9 * dt;

    let mut stepper = Stepper::new(model, &grid, dt, config.scheme)?;
    let mut v = v0.values().to_vec();
    let mut w = w0.values().to_vec();
    let mut z = vec![0.0; n];
    let mut dw = vec![0.0; n + 1];

    let record_count = steps / config.record_stride + 2;
    let mut traj = Trajectory {
        times: Vec::with_capacity(record_count),
        phi_series: Vec::with_capacity(record_count),
        min_phi_after_t0: f64::INFINITY,
        snapshots: Vec::new(),
        energy: Vec::with_capacity(record_count),
        horizon: steps as f64 * dt,
        observe_from: config.observe_from,
    };
    let mut gradient_integral = 0.0;
    let mut power_integral = 0.0;

    let record = |traj: &mut Trajectory, t: f64, v: &[f64], w: &[f64], gi: f64, pi: f64| {
        let phi = pulse_functional_values(v, h, length, v_star);
        traj.times.push(t);
        traj.phi_series.push(phi);
        if t >= config.observe_from - t0_tol && phi < traj.min_phi_after_t0 {
            traj.min_phi_after_t0 = phi;
        }
        traj.energy.push(EnergyRecord {
            l2_v: l2_weighted(v, h),
            l2_w: l2_weighted(w, h),
            gradient_integral: gi,
            power_integral: pi,
        });
    };
    let snapshot = |traj: &mut Trajectory, t: f64, v: &[f64], w: &[f64]| {
        traj.snapshots.push((
            t,
            SystemState {
                v: GridFunction::from_raw(grid, v.to_vec()),
                w: GridFunction::from_raw(grid, w.to_vec()),
            },
        ));
    };

    record(&mut traj, 0.0, &v, &w, 0.0, 0.0);
    if config.snapshot_stride > 0 {
        snapshot(&mut traj, 0.0, &v, &w);
    }
    for j in 1..=steps {
        gradient_integral += dt * gradient_sq(&v, h);
        power_integral += dt * power_weighted(&v, h, m_plus_1);
        for zl in z.iter_mut() {
            *zl = rng.next_normal();
        }
        noise.increments_from_normals(&z, dt, &mut dw);
        if !stepper.advance(&mut v, &mut w, &dw) {
            return Err(Error::Overflow {
                step: j,
                scheme: config.scheme.name().into(),
            });
        }
        let t = j as f64 * dt;
        if j % config.record_stride == 0 || j == steps {
            record(&mut traj, t, &v, &w, gradient_integral, power_integral);
        }
        if config.snapshot_stride > 0 && j % config.snapshot_stride == 0 {
            snapshot(&mut traj, t, &v, &w);
        }
    }
    Ok(traj)
}

/// Initial data for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    /// `v = v_rest + amplitude * exp(-(xi / width)^2)`, `w = w_rest`.
    Pulse {
        v_rest: f64,
        w_rest: f64,
        amplitude: f64,
        width: f64,
    },
    Constant {
        v: f64,
        w: f64,
    },
}

impl InitialCondition {
    /// Default supra-threshold bump at the left boundary for the FHN rest state.
    pub fn fhn_pulse(rest: (f64, f64)) -> Self {
        InitialCondition::Pulse {
            v_rest: rest.0,
            w_rest: rest.1,
            amplitude: 2.0,
            width: 2.0,
        }
    }

    pub fn state(&self, grid: Grid) -> Result<SystemState> {
        match *self {
            InitialCondition::Pulse {
                v_rest,
                w_rest,
                amplitude,
                width,
            } => SystemState::new(
                GridFunction::restrict(
                    |x| v_rest + amplitude * (-(x / width).powi(2)).exp(),
                    grid,
                )?,
                GridFunction::constant(grid, w_rest)?,
            ),
            InitialCondition::Constant { v, w } => SystemState::new(
                GridFunction::constant(grid, v)?,
                GridFunction::constant(grid, w)?,
            ),
        }
    }
}

/// Outcome of the ensemble energy inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub lhs_mean: f64,
    pub rhs_bound: f64,
    pub margin: f64,
    pub mc_stderr: f64,
    pub passed: bool,
}

/// Compares the ensemble mean of
/// `l2(v(T)) + l2(w(T)) + 2 int ||v||_n^2 + 2 gamma int l_{m+1}(v)`
/// with `exp(2 max(L, beta) T) (E[l2(v0) + l2(w0)] + T (tr Q + 2 K |D|))`,
/// where `K` is the model's dissipativity offset and `|D|` the domain length.
pub fn energy_check<M: ReactionModel + ?Sized>(
    trajectories: &[Trajectory],
    model: &M,
    noise: &DiscreteNoise,
    horizon: f64,
) -> Result<EnergyReport> {
    if trajectories.is_empty() {
        return Err(Error::Parameter(
            "energy check needs at least one trajectory".into(),
        ));
    }
    let c = model.constants();
    let m = trajectories.len() as f64;
    let lhs: Vec<f64> = trajectories
        .iter()
        .map(|t| {
            let e = t.final_energy();
            e.l2_v + e.l2_w + 2.0 * e.gradient_integral + 2.0 * c.gamma * e.power_integral
        })
        .collect();
    let initial_mean = trajectories
        .iter()
        .map(|t| t.energy[0].l2_v + t.energy[0].l2_w)
        .sum::<f64>()
        / m;
    let lhs_mean = lhs.iter().sum::<f64>() / m;
    let mc_stderr = if trajectories.len() > 1 {
        let var = lhs.iter().map(|x| (x - lhs_mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    let forcing = noise.trace_q() + 2.0 * c.dissipativity_offset * noise.grid().length();
    let rhs_bound =
        (2.0 * c.lipschitz.max(c.beta) * horizon).exp() * (initial_mean + horizon * forcing);
    Ok(EnergyReport {
        lhs_mean,
        rhs_bound,
        margin: rhs_bound - lhs_mean,
        mc_stderr,
        passed: lhs_mean <= rhs_bound + 3.0 * mc_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fhn_model;
    use crate::noise::{derive_substream, discretize_kernel, CovarianceKernel};

    fn config(n: usize, length: f64, dt: f64, horizon: f64, scheme: Scheme) -> SolverConfig {
        SolverConfig {
            n,
            length,
            dt,
            horizon,
            observe_from: 0.0,
            scheme,
            record_stride: 1,
            snapshot_stride: 0,
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [
            Scheme::TamedExplicit,
            Scheme::SemiImplicit,
            Scheme::Explicit,
        ] {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("implicit".parse::<Scheme>().is_err());
    }

    #[test]
    fn step_counts() {
        let mut c = config(4, 1.0, 1e-3, 1.0, Scheme::SemiImplicit);
        assert_eq!(c.step_count(), 1000);
        c.horizon = 0.0;
        assert_eq!(c.step_count(), 0);
        c.horizon = 0.0105;
        assert_eq!(c.step_count(), 11);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_every_scheme() {
        let model = fhn_model();
        let (vs, ws) = model.equilibrium();
        let grid = Grid::new(16, 1.0).unwrap();
        let state = InitialCondition::Constant { v: vs, w: ws }
            .state(grid)
            .unwrap();
        let dw = vec![0.0; 17];
        for scheme in [
            Scheme::Explicit,
            Scheme::TamedExplicit,
            Scheme::SemiImplicit,
        ] {
            let next = step(&state, &model, &dw, 1e-3, scheme).unwrap();
            for k in 0..=16 {
                assert!((next.v.values()[k] - vs).abs() < 1e-12);
                assert!((next.w.values()[k] - ws).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taming_bounds_the_semi_implicit_reaction() {
        let model = fhn_model();
        let grid = Grid::new(8, 1.0).unwrap();
        let state = InitialCondition::Constant { v: 1e3, w: 0.0 }
            .state(grid)
            .unwrap();
        let next = step(&state, &model, &[0.0; 9], 0.5, Scheme::SemiImplicit).unwrap();
        for (a, b) in next.v.values().iter().zip(state.v.values()) {
            assert!((a - b).abs() <= 1.0);
        }
        assert!(tamed_reaction(0.1, 1e300).abs() <= 1.0);
        assert!(tamed_reaction(0.1, 1e3).abs() < 1.0);
    }

    #[test]
    fn explicit_schemes_enforce_cfl() {
        let model = fhn_model();
        let grid = Grid::new(10, 1.0).unwrap();
        let state = InitialCondition::Constant { v: 0.0, w: 0.0 }
            .state(grid)
            .unwrap();
        let dw = vec![0.0; 11];
        for scheme in [Scheme::Explicit, Scheme::TamedExplicit] {
            let err = step(&state, &model, &dw, 0.01, scheme).unwrap_err();
            assert!(matches!(err, Error::Config(ref m) if m.contains("CFL")));
        }
        assert!(step(&state, &model, &dw, 0.01, Scheme::SemiImplicit).is_ok());
    }

    #[test]
    fn zero_horizon_records_only_the_initial_state() {
        let model = fhn_model();
        let grid = Grid::new(8, 20.0).unwrap();
        let noise = discretize_kernel(&CovarianceKernel::constant(0.1), &grid, 2).unwrap();
        let init = InitialCondition::fhn_pulse(model.equilibrium())
            .state(grid)
            .unwrap();
        let cfg = config(8, 20.0, 0.01, 0.0, Scheme::SemiImplicit);
        let traj = run_trajectory(
            &cfg,
            &model,
            &noise,
            &init.v,
            &init.w,
            &mut derive_substream(1, 0),
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0]);
        let phi0 = crate::mc::pulse_functional(&init.v, model.equilibrium().0);
        assert_eq!(traj.min_phi_after_t0, phi0);
    }

    #[test]
    fn overflow_reports_step_and_scheme() {
        let model = fhn_model();
        let grid = Grid::new(2, 1e3).unwrap();
        let noise = discretize_kernel(&CovarianceKernel::zero(), &grid, 1).unwrap();
        let init = InitialCondition::Constant { v: 10.0, w: 0.0 }
            .state(grid)
            .unwrap();
        let cfg = config(2, 1e3, 0.1, 2.0, Scheme::Explicit);
        let err = run_trajectory(
            &cfg,
            &model,
            &noise,
            &init.v,
            &init.w,
            &mut derive_substream(1, 0),
        )
        .unwrap_err();
        match err {
            Error::Overflow { step, scheme } => {
                assert!(step <= 20);
                assert_eq!(scheme, "explicit");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn energy_check_degenerate_ensemble() {
        let model = fhn_model();
        let grid = Grid::new(16, 20.0).unwrap();
        let noise = discretize_kernel(&CovarianceKernel::zero(), &grid, 2).unwrap();
        let init = InitialCondition::Constant { v: 0.0, w: 0.0 }
            .state(grid)
            .unwrap();
        let cfg = config(16, 20.0, 0.01, 1.0, Scheme::SemiImplicit);
        let traj = run_trajectory(
            &cfg,
            &model,
            &noise,
            &init.v,
            &init.w,
            &mut derive_substream(3, 0),
        )
        .unwrap();
        let report = energy_check(&[traj], &model, &noise, 1.0).unwrap();
        assert_eq!(report.mc_stderr, 0.0);
        assert!(report.passed);
        assert!(report.margin > 0.0);
        assert!(energy_check(&[], &model, &noise, 1.0).is_err());
    }
}
