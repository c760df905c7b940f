//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 I/O failure, 2 configuration error, 3 numerical
//! overflow, 4 too many failed samples, 5 a check failed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::analysis::{convergence_study, fit_order, ConvergenceSpec};
use crate::config::Config;
use crate::error::Error;
use crate::grid::{Grid, GridFunction};
use crate::mc::{
    confidence_halfwidth, confidence_interval, estimate_failure_probability, FailureSpec,
    SampleOutcome,
};
use crate::model::{
    check_assumptions, fhn_model, Assumption, ModelConstants, PolynomialModel, ReactionModel,
    SamplingSpec,
};
use crate::noise::{covariance_check, derive_substream, discretize_kernel, CovarianceKernel};
use crate::operators::sbp_defect;
use crate::sim::{energy_check, run_trajectory, InitialCondition, Scheme, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_OVERFLOW: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "srdfd",
    version,
    about = "Finite-difference stochastic reaction-diffusion toolkit"
)]
pub struct Cli {
    /// Configuration file (flat `key=value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism). Never changes outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Override a configuration key, e.g. `--set solver.n=64`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trajectory and write snapshots, the pulse functional series and an energy report.
    Simulate,
    /// Empirical spatial convergence study with coupled noise.
    Converge,
    /// Monte-Carlo estimate of the propagation-failure probability.
    Failure,
    /// Spot-check model assumptions, summation by parts and noise covariance.
    Check,
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Overflow { .. } => EXIT_OVERFLOW,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses arguments, runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<i32> {
    let threads = cli.threads.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError {
            code: EXIT_CONFIG,
            message: format!("cannot build worker pool: {e}"),
        })?;
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError {
                code: EXIT_CONFIG,
                message: format!("cannot read config {}: {e}", path.display()),
            })?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    for assignment in &cli.overrides {
        cfg.apply_override(assignment)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", seed.to_string());
    }
    fs::create_dir_all(&cli.out)?;
    pool.install(|| match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::Converge => cmd_converge(&cfg, &cli.out),
        Command::Failure => cmd_failure(&cfg, &cli.out),
        Command::Check => cmd_check(&cfg, &cli.out),
    })
}

/// Model, noise, solver and initial data resolved from a config.
pub struct Setup {
    pub model: Arc<dyn ReactionModel>,
    pub rest: (f64, f64),
    pub kernel: CovarianceKernel,
    pub quad_order: usize,
    pub solver: SolverConfig,
    pub init: InitialCondition,
    pub seed: u64,
}

fn model_constants(cfg: &Config, defaults: ModelConstants) -> crate::Result<ModelConstants> {
    let c = ModelConstants {
        lipschitz: cfg.get_or("model.lipschitz", defaults.lipschitz)?,
        beta: cfg.get_or("model.beta", defaults.beta)?,
        gamma: cfg.get_or("model.gamma", defaults.gamma)?,
        growth_exponent: cfg.get_or("model.m", defaults.growth_exponent)?,
        growth_bound: cfg.get_or("model.growth_bound", defaults.growth_bound)?,
        dissipativity_offset: cfg
            .get_or("model.dissipativity_offset", defaults.dissipativity_offset)?,
    };
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(c)
}

/// Resolves `model.*` keys.
pub fn resolve_model(cfg: &Config) -> crate::Result<(Arc<dyn ReactionModel>, (f64, f64))> {
    let name = cfg.require_str("model.name")?;
    match name.as_str() {
        "fhn" => {
            let mut m = fhn_model();
            m.noise_intensity = cfg.get_or("model.b", 1.0)?;
            m.constants = model_constants(cfg, m.constants)?;
            let rest = m.equilibrium();
            Ok((Arc::new(m), rest))
        }
        "polynomial" => {
            let phi2: Vec<f64> = cfg.list_or("model.phi2", &[0.0, 0.0, 0.0])?;
            if phi2.len() != 3 {
                return Err(Error::Config(
                    "`model.phi2` needs exactly three coefficients".into(),
                ));
            }
            let defaults = ModelConstants {
                lipschitz: 1.0,
                beta: 0.0,
                gamma: 1.0,
                growth_exponent: 3.0,
                growth_bound: 1.0,
                dissipativity_offset: 0.0,
            };
            let rest = (
                cfg.get_or("model.v_star", 0.0)?,
                cfg.get_or("model.w_star", 0.0)?,
            );
            let m = PolynomialModel {
                phi1_v: cfg.require_list("model.phi1.v")?,
                phi1_w: cfg.get_or("model.phi1.w", 0.0)?,
                phi2: [phi2[0], phi2[1], phi2[2]],
                noise_intensity: cfg.get_or("model.b", 1.0)?,
                rest_level: rest.0,
                constants: model_constants(cfg, defaults)?,
            };
            Ok((Arc::new(m), rest))
        }
        other => Err(Error::Config(format!(
            "unknown model `{other}` in key `model.name` (expected fhn or polynomial)"
        ))),
    }
}

pub fn resolve_kernel(cfg: &Config) -> crate::Result<(CovarianceKernel, usize)> {
    let name = cfg.require_str("noise.kernel")?;
    let mut params = std::collections::BTreeMap::new();
    params.insert("sigma".to_string(), cfg.get_or("noise.sigma", 0.1)?);
    if name != "constant" {
        params.insert(
            "corr_length".to_string(),
            cfg.get_or("noise.corr_length", 1.0)?,
        );
    }
    let kernel = CovarianceKernel::from_registry(&name, &params)?;
    let quad_order = cfg.get_or("noise.quad_order", 4usize)?;
    if quad_order == 0 {
        return Err(Error::Config(
            "`noise.quad_order` must be at least 1".into(),
        ));
    }
    Ok((kernel, quad_order))
}

pub fn resolve(cfg: &Config) -> crate::Result<Setup> {
    let (model, rest) = resolve_model(cfg)?;
    let (kernel, quad_order) = resolve_kernel(cfg)?;
    let scheme: Scheme = cfg.str_or("solver.scheme", "semi_implicit").parse()?;
    let horizon: f64 = cfg.get_or("solver.horizon", 20.0)?;
    let mut solver = SolverConfig {
        n: cfg.get_or("solver.n", 128usize)?,
        length: cfg.get_or("solver.length", 20.0)?,
        dt: cfg.get_or("solver.dt", 1e-3)?,
        horizon,
        observe_from: cfg.get_or("solver.observe_from", horizon / 4.0)?,
        scheme,
        record_stride: cfg.get_or("solver.record_stride", 10usize)?,
        snapshot_stride: 0,
    };
    let default_snapshots = (solver.step_count() / 4).max(1);
    solver.snapshot_stride = cfg.get_or("solver.snapshot_stride", default_snapshots)?;
    let init = match cfg.str_or("init.profile", "pulse").as_str() {
        "pulse" => InitialCondition::Pulse {
            v_rest: rest.0,
            w_rest: rest.1,
            amplitude: cfg.get_or("init.amplitude", 2.0)?,
            width: cfg.get_or("init.width", 2.0)?,
        },
        "equilibrium" => InitialCondition::Constant { v: rest.0, w: rest.1 },
        other => {
            return Err(Error::Config(format!(
                "unknown initial profile `{other}` in key `init.profile` (expected pulse or equilibrium)"
            )))
        }
    };
    Ok(Setup {
        model,
        rest,
        kernel,
        quad_order,
        solver,
        init,
        seed: cfg.get_or("run.seed", 0u64)?,
    })
}

fn write_output(dir: &Path, name: &str, header: &str, body: &str) -> CliResult<()> {
    fs::write(dir.join(name), format!("{header}{body}"))?;
    Ok(())
}

pub fn cmd_simulate(cfg: &Config, out: &Path) -> CliResult<i32> {
    let setup = resolve(cfg)?;
    setup.solver.validate()?;
    let grid = setup.solver.grid()?;
    let noise = discretize_kernel(&setup.kernel, &grid, setup.quad_order)?;
    let init = setup.init.state(grid)?;
    let mut rng = derive_substream(setup.seed, 0);
    let traj = run_trajectory(
        &setup.solver,
        setup.model.as_ref(),
        &noise,
        &init.v,
        &init.w,
        &mut rng,
    )?;
    let header = cfg.echo();

    let mut snaps = String::from("t,xi,v,w\n");
    for (t, state) in &traj.snapshots {
        for (k, xi) in grid.nodes().enumerate() {
            let _ = writeln!(
                snaps,
                "{t:.16e},{xi:.16e},{:.16e},{:.16e}",
                state.v.values()[k],
                state.w.values()[k]
            );
        }
        snaps.push('\n');
    }
    write_output(out, "snapshots.csv", &header, &snaps)?;

    let mut phi = String::from("t,phi\n");
    for (t, p) in traj.times.iter().zip(&traj.phi_series) {
        let _ = writeln!(phi, "{t:.16e},{p:.16e}");
    }
    write_output(out, "phi.csv", &header, &phi)?;

    let report = energy_check(
        std::slice::from_ref(&traj),
        setup.model.as_ref(),
        &noise,
        traj.horizon,
    )?;
    let e = traj.final_energy();
    let body = format!(
        "l2_v={:.16e}\nl2_w={:.16e}\ngradient_integral={:.16e}\npower_integral={:.16e}\nlhs={:.16e}\nrhs_bound={:.16e}\nmargin={:.16e}\nmin_phi_after_t0={:.16e}\nstatus={}\n",
        e.l2_v,
        e.l2_w,
        e.gradient_integral,
        e.power_integral,
        report.lhs_mean,
        report.rhs_bound,
        report.margin,
        traj.min_phi_after_t0,
        if report.passed { "PASS" } else { "FAIL" }
    );
    write_output(out, "energy.txt", &header, &body)?;
    println!(
        "simulated {} steps; min phi after t0 = {:.6}; energy bound {}",
        setup.solver.step_count(),
        traj.min_phi_after_t0,
        if report.passed { "holds" } else { "violated" }
    );
    Ok(EXIT_OK)
}

pub fn cmd_converge(cfg: &Config, out: &Path) -> CliResult<i32> {
    let mut setup = resolve(cfg)?;
    let resolutions: Vec<usize> = cfg.list_or("converge.resolutions", &[32, 64, 128])?;
    if resolutions.len() < 2 {
        return Err(Error::Config(
            "`converge.resolutions` needs at least two entries for an order fit".into(),
        )
        .into());
    }
    let spec = ConvergenceSpec {
        resolutions,
        reference: cfg.get_or("converge.reference", 512usize)?,
        samples: cfg.get_or("converge.samples", 32usize)?,
        seed: setup.seed,
        p_norm: cfg.get_or("converge.p", 2.0)?,
        quad_order: setup.quad_order,
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    if !cfg.contains("solver.dt") && setup.solver.scheme.needs_cfl() {
        let h = setup.solver.length / spec.reference as f64;
        setup.solver.dt = h * h / 4.0;
        cfg.get_or("solver.dt", setup.solver.dt)?;
    }
    let rows = convergence_study(
        &setup.solver,
        setup.model.as_ref(),
        &setup.kernel,
        &setup.init,
        &spec,
    )?;
    let header = cfg.echo();
    let mut csv = String::from("n,error,samples,failures\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{:.16e},{},{}", r.n, r.error, r.samples, r.failures);
    }
    write_output(out, "convergence.csv", &header, &csv)?;

    let table: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.error)).collect();
    let (line, kv) = match fit_order(&table) {
        Ok(fit) => (
            format!("order={:.6} r2={:.6}\n", fit.order, fit.r_squared),
            format!(
                "order={:.16e}\nintercept={:.16e}\nr2={:.16e}\n",
                fit.order, fit.intercept, fit.r_squared
            ),
        ),
        Err(e) => {
            log::warn!("{e}");
            (
                "order=nan r2=nan\n".to_string(),
                "order=nan\nintercept=nan\nr2=nan\n".to_string(),
            )
        }
    };
    write_output(out, "fit.txt", &header, &line)?;
    write_output(out, "fit.kv", &header, &kv)?;
    print!("{line}");

    let failures = rows.first().map(|r| r.failures).unwrap_or(0);
    let succeeded = spec.samples - failures;
    if (succeeded as f64) < 0.8 * spec.samples as f64 {
        eprintln!("only {succeeded} of {} samples succeeded", spec.samples);
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

pub fn cmd_failure(cfg: &Config, out: &Path) -> CliResult<i32> {
    let setup = resolve(cfg)?;
    let grid = setup.solver.grid()?;
    let noise = discretize_kernel(&setup.kernel, &grid, setup.quad_order)?;
    let init = setup.init.state(grid)?;
    let spec = FailureSpec {
        kappa: cfg.get_or("failure.kappa", 5.0)?,
        epsilon: cfg.get_or("failure.epsilon", 0.1)?,
        observe_from: setup.solver.observe_from,
        confidence_alpha: cfg.get_or("failure.alpha", 0.05)?,
        c_hat: cfg.get_or("failure.c_hat", 1.0)?,
        samples: cfg.get_or("failure.samples", 100usize)?,
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let est = estimate_failure_probability(
        &setup.solver,
        setup.model.as_ref(),
        &noise,
        &init.v,
        &init.w,
        &spec,
        setup.seed,
    )?;
    let header = cfg.echo();

    let mut csv = String::from("sample,outcome,min_phi\n");
    for (i, o) in est.outcomes.iter().enumerate() {
        let _ = match o {
            SampleOutcome::Propagated { min_phi } => writeln!(csv, "{i},0,{min_phi:.16e}"),
            SampleOutcome::Failed { min_phi } => writeln!(csv, "{i},1,{min_phi:.16e}"),
            SampleOutcome::Overflow { step } => writeln!(csv, "{i},overflow@{step},nan"),
        };
    }
    write_output(out, "indicators.csv", &header, &csv)?;

    let effective = FailureSpec {
        samples: est.effective_samples.max(1),
        ..spec
    };
    let gamma = confidence_halfwidth(&effective, grid.n());
    let (lo, hi) = confidence_interval(est.p_hat, gamma);
    let record = format!(
        "p_hat={} gamma={} m={} failures={} overflows={} seed={} interval=[{},{}] level=chebyshev\n",
        est.p_hat, gamma, est.effective_samples, est.failures, est.overflows, setup.seed, lo, hi
    );
    write_output(out, "failure.txt", &header, &record)?;
    println!("p_hat = {} ± {}", est.p_hat, gamma);

    if est.overflows as f64 > 0.2 * spec.samples as f64 {
        eprintln!(
            "{} of {} trajectories overflowed",
            est.overflows, spec.samples
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

pub fn cmd_check(cfg: &Config, out: &Path) -> CliResult<i32> {
    let (model, _) = resolve_model(cfg)?;
    let (kernel, quad_order) = resolve_kernel(cfg)?;
    let length: f64 = cfg.get_or("solver.length", 20.0)?;
    let seed: u64 = cfg.get_or("run.seed", 0u64)?;
    let sampling = SamplingSpec {
        domain_length: length,
        v_bound: cfg.get_or("check.v_bound", 5.0)?,
        w_bound: cfg.get_or("check.w_bound", 5.0)?,
        samples: cfg.get_or("check.samples", 100_000usize)?,
        seed,
    };
    let pairs: usize = cfg.get_or("check.sbp_pairs", 1000usize)?;
    let draws: usize = cfg.get_or("check.cov_draws", 100_000usize)?;

    let mut lines = String::new();
    let mut all_pass = true;
    let mut item = |label: &str, pass: bool, detail: String| {
        all_pass &= pass;
        let _ = writeln!(
            lines,
            "{} {label} {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    let report = check_assumptions(model.as_ref(), &sampling)?;
    for a in Assumption::ALL {
        item(
            a.label(),
            report.passed(a),
            format!("worst_margin={:.6e}", report.margin(a)),
        );
    }

    let mut rng = derive_substream(seed, 1);
    let mut worst_sbp = 0.0f64;
    for n in [8usize, 64, 512] {
        let grid = Grid::new(n, length)?;
        for _ in 0..pairs {
            let v = GridFunction::new(grid, (0..=n).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
            let u = GridFunction::new(grid, (0..=n).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
            let scale =
                1.0 + v.v_seminorm() * u.v_seminorm() + (v.lp_norm(2.0)? * u.lp_norm(2.0)?).sqrt();
            worst_sbp = worst_sbp.max(sbp_defect(&v, &u)?.abs() / scale);
        }
    }
    item(
        "SBP",
        worst_sbp < 1e-10,
        format!("max_relative_defect={worst_sbp:.3e}"),
    );

    let cov_grid = Grid::new(8, length)?;
    let noise = discretize_kernel(&kernel, &cov_grid, quad_order)?;
    let mut cov_rng = derive_substream(seed, 2);
    let cov = covariance_check(&noise, 1.0, draws, 0.05, &mut cov_rng);
    item(
        "COV",
        cov.fraction_within_correlation_scale >= 0.95,
        format!(
            "fraction_within={:.4}",
            cov.fraction_within_correlation_scale
        ),
    );

    write_output(out, "check.txt", &cfg.echo(), &lines)?;
    print!("{lines}");
    Ok(if all_pass { EXIT_OK } else { EXIT_CHECK })
}
