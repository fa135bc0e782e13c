//! Model definition: coefficients, initial laws, observables, and the
//! serializable description tying them together.

mod coefficient;
mod law;
mod testfn;
mod validate;

pub use coefficient::Coefficient;
pub use law::InitialLaw;
pub use testfn::{
    entropy_observable, geometric_mean_observable, lp_diversity_observable, Normalization,
    ObservableKind, ObservableSpec, ScalarFn, TestFunction,
};
pub use validate::{
    check_stability_condition, stability_report, validate_assumptions, AssumptionReport,
    StabilityReport,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Complete description of one finite particle system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Number of particles.
    pub n: usize,
    /// Time horizon.
    #[serde(rename = "T")]
    pub t_horizon: f64,
    /// Euler time step; must divide the horizon.
    pub dt: f64,
    /// Master seed for every random stream derived from this model.
    pub seed: u64,
    /// Drift as a function of rank.
    pub b: Coefficient,
    /// Volatility as a function of rank.
    pub sigma: Coefficient,
    /// Initial law of the positions.
    pub lambda: InitialLaw,
}

impl ModelSpec {
    /// Validates all components plus the time-grid consistency.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if !(self.t_horizon > 0.0 && self.t_horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {}",
                self.t_horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive and finite, got {}",
                self.dt
            )));
        }
        self.num_steps()?;
        self.b.validate()?;
        self.sigma.validate()?;
        self.lambda.validate()?;
        let (sigma_min, _) = self.sigma.range_on_unit();
        if sigma_min <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "volatility must be strictly positive on [0, 1], minimum {sigma_min}"
            )));
        }
        Ok(())
    }

    /// Number of Euler steps. Fails unless dt divides the horizon to within
    /// a relative slack of 1e-9.
    pub fn num_steps(&self) -> Result<usize> {
        let ratio = self.t_horizon / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} must divide the horizon T = {}",
                self.dt, self.t_horizon
            )));
        }
        Ok(steps as usize)
    }

    /// Assumption checks for this model's coefficients and initial law.
    pub fn assumption_report(&self) -> AssumptionReport {
        validate_assumptions(&self.b, &self.sigma, &self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> ModelSpec {
        ModelSpec {
            n: 100,
            t_horizon: 1.0,
            dt: 0.01,
            seed: 42,
            b: Coefficient::Affine([0.5, -1.0]),
            sigma: Coefficient::Constant([1.0]),
            lambda: InitialLaw::Gaussian([0.0, 1.0]),
        }
    }

    #[test]
    fn valid_spec_passes_and_counts_steps() {
        let spec = base_spec();
        spec.validate().unwrap();
        assert_eq!(spec.num_steps().unwrap(), 100);
    }

    #[test]
    fn misaligned_dt_is_rejected() {
        let mut spec = base_spec();
        spec.dt = 0.03;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_particles_and_degenerate_sigma_are_rejected() {
        let mut spec = base_spec();
        spec.n = 0;
        assert!(spec.validate().is_err());

        let mut spec = base_spec();
        spec.sigma = Coefficient::Affine([0.0, 1.0]);
        assert!(spec.validate().is_err(), "sigma(0) = 0 must be rejected");
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = base_spec();
        let json = serde_json::to_string_pretty(&spec).unwrap();
        assert!(json.contains("\"T\""), "horizon must serialize as T: {json}");
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
