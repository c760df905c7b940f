//! Reaction models `(phi1, phi2, b)` and sampling checks of the structural
//! assumptions on them.
//!
//! The checks are spot checks: they draw points from a bounded box and report
//! the worst margin of each inequality. A negative margin means the model,
//! together with its declared constants, violates the inequality at some
//! sampled point.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Constants declared alongside a reaction model.
///
/// `dissipativity_offset` is the additive constant `K` in
/// `phi . x <= beta |w|^2 + L |v|^2 - gamma |v|^{m+1} + K`. Any affine `phi2`
/// with a nonzero constant term needs `K > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub lipschitz: f64,
    pub beta: f64,
    pub gamma: f64,
    pub growth_exponent: f64,
    pub growth_bound: f64,
    pub dissipativity_offset: f64,
}

impl ModelConstants {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !(c.lipschitz > 0.0) {
            return Err(Error::Parameter(
                "Lipschitz constant must be positive".into(),
            ));
        }
        if !(c.gamma > 0.0) {
            return Err(Error::Parameter("gamma must be positive".into()));
        }
        if !(c.growth_exponent > 1.0 && c.growth_exponent <= 3.0) {
            return Err(Error::Parameter(format!(
                "growth exponent must lie in (1, 3], got {}",
                c.growth_exponent
            )));
        }
        if !(c.growth_bound > 0.0) {
            return Err(Error::Parameter("growth bound M must be positive".into()));
        }
        if !(c.beta.is_finite() && c.dissipativity_offset >= 0.0) {
            return Err(Error::Parameter(
                "beta must be finite and the offset >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Pointwise nonlinearities of a two-component reaction-diffusion system.
///
/// Implementations must be pure: they are evaluated concurrently from many
/// trajectory workers.
pub trait ReactionModel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    fn phi1(&self, xi: f64, v: f64, w: f64) -> f64;
    fn phi2(&self, xi: f64, v: f64, w: f64) -> f64;
    /// Noise intensity `b(xi, v)`.
    fn diffusion(&self, _xi: f64, _v: f64) -> f64 {
        1.0
    }
    fn constants(&self) -> ModelConstants;
    /// Reference level `v*` subtracted by the pulse functional.
    fn rest_level(&self) -> f64 {
        0.0
    }
}

/// The FitzHugh-Nagumo kinetics
/// `phi1 = v - v^3/3 - w`, `phi2 = rate (v - recovery w + offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitzHughNagumo {
    pub rate: f64,
    pub recovery: f64,
    pub offset: f64,
    pub noise_intensity: f64,
    pub constants: ModelConstants,
}

impl Default for FitzHughNagumo {
    fn default() -> Self {
        Self {
            rate: 0.08,
            recovery: 0.8,
            offset: 0.7,
            noise_intensity: 1.0,
            constants: ModelConstants {
                lipschitz: 2.0,
                beta: 0.25,
                gamma: 1.0 / 6.0,
                growth_exponent: 3.0,
                growth_bound: 2.0,
                dissipativity_offset: 0.01,
            },
        }
    }
}

/// The classical parameter set (`rate = 0.08`, `recovery = 0.8`, `offset = 0.7`).
pub fn fhn_model() -> FitzHughNagumo {
    FitzHughNagumo::default()
}

impl FitzHughNagumo {
    /// Unique real rest state `(v*, w*)`.
    ///
    /// On the linear nullcline `w = (v + offset) / recovery`; the remaining
    /// cubic is solved by bisection on `[-2, 0]`.
    pub fn equilibrium(&self) -> (f64, f64) {
        let g = |v: f64| v - v * v * v / 3.0 - (v + self.offset) / self.recovery;
        let (mut lo, mut hi) = (-2.0_f64, 0.0_f64);
        let mut g_lo = g(lo);
        debug_assert!(g_lo > 0.0 && g(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let g_mid = g(mid);
            if g_mid == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (g_mid > 0.0) == (g_lo > 0.0) {
                lo = mid;
                g_lo = g_mid;
            } else {
                hi = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        (v, (v + self.offset) / self.recovery)
    }
}

impl ReactionModel for FitzHughNagumo {
    fn name(&self) -> &str {
        "fhn"
    }

    fn phi1(&self, _xi: f64, v: f64, w: f64) -> f64 {
        v - v * v * v / 3.0 - w
    }

    fn phi2(&self, _xi: f64, v: f64, w: f64) -> f64 {
        self.rate * (v - self.recovery * w + self.offset)
    }

    fn diffusion(&self, _xi: f64, _v: f64) -> f64 {
        self.noise_intensity
    }

    fn constants(&self) -> ModelConstants {
        self.constants
    }

    fn rest_level(&self) -> f64 {
        self.equilibrium().0
    }
}

/// User model with polynomial kinetics:
/// `phi1 = sum_i a_i v^i + c w`, `phi2 = d_0 + d_v v + d_w w`, constant `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialModel {
    pub phi1_v: Vec<f64>,
    pub phi1_w: f64,
    pub phi2: [f64; 3],
    pub noise_intensity: f64,
    pub rest_level: f64,
    pub constants: ModelConstants,
}

impl ReactionModel for PolynomialModel {
    fn name(&self) -> &str {
        "polynomial"
    }

    fn phi1(&self, _xi: f64, v: f64, w: f64) -> f64 {
        self.phi1_v.iter().rev().fold(0.0, |acc, a| acc * v + a) + self.phi1_w * w
    }

    fn phi2(&self, _xi: f64, v: f64, w: f64) -> f64 {
        self.phi2[0] + self.phi2[1] * v + self.phi2[2] * w
    }

    fn diffusion(&self, _xi: f64, _v: f64) -> f64 {
        self.noise_intensity
    }

    fn constants(&self) -> ModelConstants {
        self.constants
    }

    fn rest_level(&self) -> f64 {
        self.rest_level
    }
}

/// Looks up a built-in model by name.
pub fn builtin(name: &str) -> Option<Arc<dyn ReactionModel>> {
    match name {
        "fhn" => Some(Arc::new(fhn_model())),
        _ => None,
    }
}

/// Sampling box and sample budget for [`check_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub domain_length: f64,
    pub v_bound: f64,
    pub w_bound: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Labels of the checked inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Assumption {
    /// One-sided Lipschitz condition on `(phi1, phi2)`.
    A1,
    /// Dissipativity.
    A2,
    /// Growth of `phi1`.
    A3,
    /// Linear growth of `phi2`.
    A4,
    /// Local Lipschitz bound on `phi1`.
    A5,
    /// Global Lipschitz bound on `phi2`.
    A6,
    /// `|b| <= 1` and `b` is 1-Lipschitz.
    A8,
}

impl Assumption {
    pub const ALL: [Assumption; 7] = [
        Assumption::A1,
        Assumption::A2,
        Assumption::A3,
        Assumption::A4,
        Assumption::A5,
        Assumption::A6,
        Assumption::A8,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Assumption::A1 => "A1",
            Assumption::A2 => "A2",
            Assumption::A3 => "A3",
            Assumption::A4 => "A4",
            Assumption::A5 => "A5",
            Assumption::A6 => "A6",
            Assumption::A8 => "A8",
        }
    }
}

/// Worst relative margin `(rhs - lhs) / (1 + |lhs| + |rhs|)` per inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub margins: Vec<(Assumption, f64)>,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn margin(&self, which: Assumption) -> f64 {
        self.margins
            .iter()
            .find(|(a, _)| *a == which)
            .map(|(_, m)| *m)
            .unwrap_or(f64::NAN)
    }

    pub fn passed(&self, which: Assumption) -> bool {
        self.margin(which) >= -MARGIN_TOLERANCE
    }

    pub fn all_passed(&self) -> bool {
        Assumption::ALL.iter().all(|a| self.passed(*a))
    }
}

// Rounding slack for inequalities that are tight at sampled points.
const MARGIN_TOLERANCE: f64 = 1e-12;

fn relative_margin(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / (1.0 + lhs.abs() + rhs.abs())
}

pub fn check_assumptions<M: ReactionModel + ?Sized>(
    model: &M,
    spec: &SamplingSpec,
) -> Result<AssumptionReport> {
    if !(spec.domain_length > 0.0 && spec.v_bound > 0.0 && spec.w_bound > 0.0) {
        return Err(Error::Parameter(
            "sampling box must be bounded and nonempty".into(),
        ));
    }
    let c = model.constants();
    let m = c.growth_exponent;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut worst = [f64::INFINITY; 7];
    let mut record = |i: usize, lhs: f64, rhs: f64| {
        let margin = relative_margin(lhs, rhs);
        if margin < worst[i] || margin.is_nan() {
            worst[i] = margin;
        }
    };

    for _ in 0..spec.samples {
        let xi1 = rng.random_range(0.0..=spec.domain_length);
        let xi2 = rng.random_range(0.0..=spec.domain_length);
        let v1 = rng.random_range(-spec.v_bound..=spec.v_bound);
        let v2 = rng.random_range(-spec.v_bound..=spec.v_bound);
        let w1 = rng.random_range(-spec.w_bound..=spec.w_bound);
        let w2 = rng.random_range(-spec.w_bound..=spec.w_bound);
        let (dv, dw, dxi) = (v1 - v2, w1 - w2, xi1 - xi2);

        // A1 compares states at a common location.
        let lhs = (model.phi1(xi1, v1, w1) - model.phi1(xi1, v2, w2)) * dv
            + (model.phi2(xi1, v1, w1) - model.phi2(xi1, v2, w2)) * dw;
        record(0, lhs, c.lipschitz * (dv * dv + dw * dw));

        let p1 = model.phi1(xi1, v1, w1);
        let p2 = model.phi2(xi1, v1, w1);
        let lhs = p1 * v1 + p2 * w1;
        let rhs = c.beta * w1 * w1 + c.lipschitz * v1 * v1 - c.gamma * v1.abs().powf(m + 1.0)
            + c.dissipativity_offset;
        record(1, lhs, rhs);

        record(
            2,
            p1.abs(),
            c.growth_bound * (1.0 + v1.abs().powf(m) + w1.abs()),
        );
        record(3, p2.abs(), c.growth_bound * (1.0 + v1.abs() + w1.abs()));

        let dist = dxi.abs() + dv.abs() + dw.abs();
        let lhs = (model.phi1(xi1, v1, w1) - model.phi1(xi2, v2, w2)).abs();
        let rhs = c.lipschitz * (1.0 + v1.abs().powf(m - 1.0) + v2.abs().powf(m - 1.0)) * dist;
        record(4, lhs, rhs);

        let lhs = (model.phi2(xi1, v1, w1) - model.phi2(xi2, v2, w2)).abs();
        record(5, lhs, c.lipschitz * dist);

        let b1 = model.diffusion(xi1, v1);
        let b2 = model.diffusion(xi2, v2);
        record(6, b1.abs(), 1.0);
        record(6, (b1 - b2).abs(), dxi.abs() + dv.abs());
    }

    Ok(AssumptionReport {
        margins: Assumption::ALL.iter().copied().zip(worst).collect(),
        samples: spec.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_box(samples: usize) -> SamplingSpec {
        SamplingSpec {
            domain_length: 20.0,
            v_bound: 5.0,
            w_bound: 5.0,
            samples,
            seed: 7,
        }
    }

    #[test]
    fn fhn_values() {
        let m = fhn_model();
        assert_eq!(m.phi1(0.3, 0.0, 0.0), 0.0);
        assert!((m.phi2(0.3, 0.0, 0.0) - 0.056).abs() < 1e-15);
        let (v, w) = m.equilibrium();
        assert!(m.phi1(0.0, v, w).abs() < 1e-10);
        assert!(m.phi2(0.0, v, w).abs() < 1e-10);
        m.constants().validate().unwrap();
    }

    #[test]
    fn equilibrium_matches_known_value() {
        let (v, w) = fhn_model().equilibrium();
        assert!((v + 1.1994).abs() < 5e-5, "v* = {v}");
        assert!((w + 0.6243).abs() < 5e-5, "w* = {w}");
    }

    #[test]
    fn rest_state_is_the_only_real_root() {
        let m = fhn_model();
        let g = |v: f64| m.phi1(0.0, v, (v + m.offset) / m.recovery);
        let mut changes = 0;
        let mut prev = g(-4.0);
        let mut x = -4.0;
        while x < 4.0 {
            x += 1e-3;
            let cur = g(x);
            if (cur > 0.0) != (prev > 0.0) {
                changes += 1;
            }
            prev = cur;
        }
        assert_eq!(changes, 1);
    }

    #[test]
    fn fhn_satisfies_assumptions_on_the_box() {
        let report = check_assumptions(&fhn_model(), &default_box(100_000)).unwrap();
        for (a, margin) in &report.margins {
            assert!(*margin >= 0.0, "{} margin {margin}", a.label());
        }
        assert!(report.all_passed());
    }

    #[test]
    fn literal_dissipativity_without_offset_fails_for_fhn() {
        let mut m = fhn_model();
        m.constants.dissipativity_offset = 0.0;
        let report = check_assumptions(&m, &default_box(100_000)).unwrap();
        assert!(!report.passed(Assumption::A2));
    }

    #[test]
    fn wrong_sign_cubic_violates_dissipativity() {
        let model = PolynomialModel {
            phi1_v: vec![0.0, 1.0, 0.0, 1.0],
            phi1_w: -1.0,
            phi2: [0.056, 0.08, -0.064],
            noise_intensity: 1.0,
            rest_level: 0.0,
            constants: fhn_model().constants,
        };
        let report = check_assumptions(&model, &default_box(20_000)).unwrap();
        assert!(report.margin(Assumption::A2) < 0.0);
        assert!(!report.all_passed());
    }

    #[test]
    fn oversized_noise_intensity_violates_a8() {
        let mut m = fhn_model();
        m.noise_intensity = 2.0;
        let report = check_assumptions(&m, &default_box(1_000)).unwrap();
        assert!(!report.passed(Assumption::A8));
        assert!(report.passed(Assumption::A1));
    }

    #[test]
    fn polynomial_model_reproduces_fhn() {
        let fhn = fhn_model();
        let poly = PolynomialModel {
            phi1_v: vec![0.0, 1.0, 0.0, -1.0 / 3.0],
            phi1_w: -1.0,
            phi2: [0.056, 0.08, -0.064],
            noise_intensity: 1.0,
            rest_level: 0.0,
            constants: fhn.constants,
        };
        for &(v, w) in &[(0.0, 0.0), (1.3, -0.4), (-2.2, 3.0)] {
            assert!((poly.phi1(0.0, v, w) - fhn.phi1(0.0, v, w)).abs() < 1e-13);
            assert!((poly.phi2(0.0, v, w) - fhn.phi2(0.0, v, w)).abs() < 1e-13);
        }
    }

    #[test]
    fn constants_validation() {
        let mut c = fhn_model().constants;
        c.growth_exponent = 3.5;
        assert!(c.validate().is_err());
        c.growth_exponent = 1.0;
        assert!(c.validate().is_err());
    }
}
