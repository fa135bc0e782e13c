//! Structural checks on model inputs.
//!
//! The limit theory needs smooth coefficients with nondegenerate volatility
//! and an initial law with all exponential moments and a bounded density.
//! The long-run portfolio analysis additionally needs the stability
//! condition on the drift: every leading group of ranks must drift upward
//! relative to the complementary group, otherwise the market spreads out
//! instead of settling into a stationary gap distribution.

use super::coefficient::Coefficient;
use super::law::InitialLaw;
use serde::Serialize;

/// Outcome of the model assumption checks, with one flag per requirement.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// Both coefficients are C^1 on [0, 1] with Holder derivatives.
    pub coefficients_smooth: bool,
    /// The volatility is bounded away from zero on [0, 1].
    pub sigma_strictly_positive: bool,
    /// The initial law has E exp(c |X|) < infinity for every c.
    pub initial_exponential_moments: bool,
    /// The initial law has a bounded density.
    pub initial_density_bounded: bool,
    /// Human-readable descriptions of any failures.
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn satisfied(&self) -> bool {
        self.coefficients_smooth
            && self.sigma_strictly_positive
            && self.initial_exponential_moments
            && self.initial_density_bounded
    }
}

/// Checks the regularity assumptions behind the hydrodynamic limit and the
/// fluctuation CLT.
pub fn validate_assumptions(
    b: &Coefficient,
    sigma: &Coefficient,
    lambda: &InitialLaw,
) -> AssumptionReport {
    let mut notes = Vec::new();

    let coefficients_smooth = b.has_holder_smooth_derivative() && sigma.has_holder_smooth_derivative();
    if !coefficients_smooth {
        notes.push(
            "a coefficient is not C^1 with a Holder derivative on [0, 1] \
             (power family with exponent in (0, 1))"
                .into(),
        );
    }

    let (sigma_min, _) = sigma.range_on_unit();
    let sigma_strictly_positive = sigma_min > 0.0;
    if !sigma_strictly_positive {
        notes.push(format!(
            "volatility must be strictly positive on [0, 1]; minimum found {sigma_min}"
        ));
    }

    let initial_exponential_moments = lambda.has_all_exponential_moments();
    if !initial_exponential_moments {
        notes.push("initial law lacks exponential moments (heavy tails)".into());
    }

    let initial_density_bounded = lambda.has_bounded_density();
    if !initial_density_bounded {
        notes.push("initial law density is unbounded".into());
    }

    AssumptionReport {
        coefficients_smooth,
        sigma_strictly_positive,
        initial_exponential_moments,
        initial_density_bounded,
        notes,
    }
}

/// Stability condition for the n-particle drift: for every split point
/// 1 <= i < n, the average drift of the lowest i ranks strictly exceeds the
/// average drift of the remaining n - i ranks.
pub fn check_stability_condition(b: &Coefficient, n: usize) -> bool {
    assert!(n >= 2, "stability condition needs at least two particles");
    let drifts: Vec<f64> = (1..=n).map(|j| b.eval(j as f64 / n as f64)).collect();
    let total: f64 = drifts.iter().sum();
    let mut head = 0.0;
    for i in 1..n {
        head += drifts[i - 1];
        let tail = total - head;
        let head_mean = head / i as f64;
        let tail_mean = tail / (n - i) as f64;
        if head_mean <= tail_mean {
            return false;
        }
    }
    true
}

/// Stability condition plus the unit-volatility requirement of the long-run
/// concentration analysis.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub drift_condition: bool,
    pub sigma_identically_one: bool,
}

pub fn stability_report(b: &Coefficient, sigma: &Coefficient, n: usize) -> StabilityReport {
    StabilityReport {
        drift_condition: check_stability_condition(b, n),
        sigma_identically_one: sigma.is_identically_one(),
    }
}
