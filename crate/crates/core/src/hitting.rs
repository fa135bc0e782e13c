//! Hitting times of market observables, for the deterministic limit and for
//! finite-n particle systems, together with the rescaled hitting-time CLT.
//!
//! The limit observable Z(t) (entropy, diversity, or geometric mean along
//! the hydrodynamic flow) hits a level a at time tau; the finite-n hitting
//! times tau_n satisfy sqrt(n)(tau_n - tau) -> N(0, chi^2) with
//! chi = (limit std of the observable fluctuation at tau) / |Z'(tau)|,
//! provided the crossing is non-degenerate (Z'(tau) != 0).

use crate::error::{Error, Result};
use crate::fluct::limit_covariance;
use crate::model::{Coefficient, ModelSpec, ObservableKind};
use crate::observables::{general_observable, limiting_drift, limiting_observable_at};
use crate::pde::{solve_porous_medium, DensityGrid, GridConfig};
use crate::sim::simulate_with;
use crate::stats::{ks_distance, mean, normal_cdf, sample_variance, SortedSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Verdict of the sufficient admissibility condition for a hitting level:
/// the level is safely below the start and the aggregate drift b + sigma^2/2
/// is nondecreasing in rank, which makes the limit observable monotone.
#[derive(Debug, Clone, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub reason: String,
}

/// Sufficient admissibility check for a hitting level of the observable.
///
/// Returns true when b + sigma^2/2 is nondecreasing on [0, 1] (probed on a
/// 1000-point grid) and the level sits at or below the initial limit value
/// (and strictly positive for the intrinsically positive observables).
pub fn admissible_level_check(
    b: &Coefficient,
    sigma: &Coefficient,
    kind: ObservableKind,
    a: f64,
    initial_value: f64,
) -> Admissibility {
    let probes = 1000usize;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=probes {
        let r = i as f64 / probes as f64;
        let s = sigma.eval(r);
        let v = b.eval(r) + 0.5 * s * s;
        if v < prev - 1e-12 {
            return Admissibility {
                admissible: false,
                reason: format!(
                    "monotonicity: b + sigma^2/2 decreases near rank {r:.3}"
                ),
            };
        }
        prev = prev.max(v);
    }
    let positive_required = !matches!(kind, ObservableKind::Entropy);
    if positive_required && a <= 0.0 {
        return Admissibility {
            admissible: false,
            reason: format!("level {a} must be positive for {}", kind.label()),
        };
    }
    if a > initial_value {
        return Admissibility {
            admissible: false,
            reason: format!("level {a} exceeds the initial value {initial_value}"),
        };
    }
    Admissibility {
        admissible: true,
        reason: "b + sigma^2/2 nondecreasing and level at or below the start".into(),
    }
}

/// Hitting data of the deterministic limit path.
#[derive(Debug, Clone)]
pub struct HittingLimit {
    pub a: f64,
    /// First time the limit observable reaches the level.
    pub tau: f64,
    /// Time derivative of the limit observable at tau.
    pub slope: f64,
    /// Limit observable at time 0.
    pub initial_value: f64,
    /// True when the level equals the initial value (immediate hit).
    pub boundary_start: bool,
}

/// Locates the first crossing of `a` by the piecewise-linear path `z` and
/// returns (bracket index, interpolation weight, crossing time).
fn first_crossing(times: &[f64], z: &[f64], a: f64) -> Option<(usize, f64, f64)> {
    if z[0] == a {
        return Some((0, 0.0, times[0]));
    }
    for i in 0..z.len() - 1 {
        let d0 = z[i] - a;
        let d1 = z[i + 1] - a;
        if d1 == 0.0 {
            return Some((i, 1.0, times[i + 1]));
        }
        if d0 * d1 < 0.0 {
            let theta = d0 / (d0 - d1);
            return Some((i, theta, times[i] + theta * (times[i + 1] - times[i])));
        }
    }
    None
}

/// First hitting time of level `a` by the limit observable along a solved
/// grid, with the slope at the crossing taken from the exact drift identity
/// (interpolated between the bracketing rows).
///
/// Fails when the path never reaches the level within the stored horizon or
/// when the crossing slope is degenerate (|Z'| < 1e-6), in which case the
/// rescaled CLT does not apply.
pub fn limit_hitting_time(
    grid: &DensityGrid,
    b: &Coefficient,
    sigma: &Coefficient,
    kind: ObservableKind,
    a: f64,
) -> Result<HittingLimit> {
    let rows = grid.times.len();
    let mut z = Vec::with_capacity(rows);
    for row in 0..rows {
        z.push(limiting_observable_at(grid, kind, row)?);
    }
    let (row, theta, tau) = first_crossing(&grid.times, &z, a).ok_or_else(|| {
        Error::Domain(format!(
            "level {a} not reached by {} within the horizon {:.6} (path range [{:.6}, {:.6}])",
            kind.label(),
            grid.times[rows - 1],
            z.iter().cloned().fold(f64::INFINITY, f64::min),
            z.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ))
    })?;
    let d_lo = limiting_drift(grid, b, sigma, kind, row)?;
    let slope = if row + 1 < rows {
        let d_hi = limiting_drift(grid, b, sigma, kind, row + 1)?;
        d_lo * (1.0 - theta) + d_hi * theta
    } else {
        d_lo
    };
    if slope.abs() < 1e-6 {
        return Err(Error::Numerical(format!(
            "degenerate slope {slope:.3e} at tau = {tau:.6}: the rescaled hitting CLT does not apply"
        )));
    }
    Ok(HittingLimit {
        a,
        tau,
        slope,
        initial_value: z[0],
        boundary_start: tau == grid.times[0],
    })
}

/// First time the linearly interpolated finite-n path equals `a`;
/// `f64::INFINITY` when the path never reaches the level.
pub fn empirical_hitting_time(times: &[f64], z: &[f64], a: f64) -> f64 {
    match first_crossing(times, z, a) {
        Some((_, _, tau)) => tau,
        None => f64::INFINITY,
    }
}

/// Configuration of the rescaled hitting-time experiment. The model's
/// horizon bounds the search for the limit crossing; the particle runs
/// themselves extend to tau + 1 (the truncation device), rounded up to a
/// whole number of steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingConfig {
    pub model: ModelSpec,
    pub kind: ObservableKind,
    /// Hitting level.
    pub a: f64,
    /// Finite-n replicas.
    pub replicas: usize,
    /// PDE resolution (store_every forced to 1).
    #[serde(default)]
    pub grid: GridConfig,
    /// Run even when the sufficient admissibility condition fails.
    #[serde(default)]
    pub override_admissibility: bool,
}

/// Outcome of the rescaled hitting-time experiment.
#[derive(Debug, Clone, Serialize)]
pub struct HittingReport {
    pub a: f64,
    pub tau: f64,
    pub slope: f64,
    /// Limit std of the observable fluctuation at tau (CLT numerator).
    pub numerator_std: f64,
    /// Predicted std of sqrt(n)(tau_n - tau): numerator_std / |slope|.
    pub chi: f64,
    pub replicas: usize,
    /// Replicas whose path never reached the level before tau + 1.
    pub never_hit: usize,
    /// Replicas dropped for numerical failure.
    pub failed: usize,
    /// KS distance of the samples to N(0, chi^2).
    pub ks: f64,
    pub mean: f64,
    pub std: f64,
    /// True when the level equals the initial value (no Gaussian claim).
    pub boundary_start: bool,
    pub admissibility: Admissibility,
    /// Samples sqrt(n)(tau_n - tau) of the replicas that hit.
    pub samples: Vec<f64>,
}

pub fn hitting_clt_experiment(cfg: &HittingConfig) -> Result<HittingReport> {
    cfg.model.validate()?;
    let mut grid_cfg = cfg.grid.clone();
    grid_cfg.store_every = Some(1);
    let grid = solve_porous_medium(
        &cfg.model.b,
        &cfg.model.sigma,
        &cfg.model.lambda,
        cfg.model.t_horizon,
        &grid_cfg,
    )?;
    let limit = limit_hitting_time(&grid, &cfg.model.b, &cfg.model.sigma, cfg.kind, cfg.a)?;
    let adm = admissible_level_check(
        &cfg.model.b,
        &cfg.model.sigma,
        cfg.kind,
        cfg.a,
        limit.initial_value,
    );
    if !adm.admissible && !cfg.override_admissibility {
        return Err(Error::InvalidParameter(format!(
            "level {} fails the admissibility check ({}); set override_admissibility to run anyway",
            cfg.a, adm.reason
        )));
    }

    let obs = cfg.kind.spec()?;
    let cov = limit_covariance(&grid, &cfg.model.b, &cfg.model.sigma, &obs, limit.tau)?;
    let numerator_std = cov.scalar_variance.max(0.0).sqrt();
    let chi = numerator_std / limit.slope.abs();

    // Particle runs extend one unit past tau (the truncation device),
    // rounded up to a whole number of steps.
    let steps = ((limit.tau + 1.0) / cfg.model.dt).ceil() as usize;
    let mut sim_spec = cfg.model.clone();
    sim_spec.t_horizon = steps as f64 * cfg.model.dt;
    sim_spec.validate()?;

    let sqrt_n = (cfg.model.n as f64).sqrt();
    let outcomes: Vec<std::result::Result<f64, bool>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let mut ts = Vec::with_capacity(steps + 1);
            let mut zs = Vec::with_capacity(steps + 1);
            let mut broken = false;
            let run = simulate_with(&sim_spec, None, rep, |_, t, x, _| {
                if broken {
                    return;
                }
                match general_observable(&obs, x) {
                    Ok(v) => {
                        ts.push(t);
                        zs.push(v);
                    }
                    Err(_) => broken = true,
                }
            });
            if run.is_err() || broken || zs.is_empty() {
                return Err(true); // numerical failure
            }
            let tau_n = empirical_hitting_time(&ts, &zs, cfg.a);
            if tau_n.is_finite() {
                Ok(sqrt_n * (tau_n - limit.tau))
            } else {
                Err(false) // clean run that never hit
            }
        })
        .collect();

    let mut samples = Vec::with_capacity(cfg.replicas);
    let mut never_hit = 0usize;
    let mut failed = 0usize;
    for o in outcomes {
        match o {
            Ok(s) => samples.push(s),
            Err(true) => failed += 1,
            Err(false) => never_hit += 1,
        }
    }
    if samples.len() < 2 {
        return Err(Error::Numerical(
            "almost all hitting replicas missed the level".into(),
        ));
    }
    let m = mean(&samples);
    let sd = sample_variance(&samples).sqrt();
    let sorted = SortedSample::new(samples.clone())?;
    let ks = ks_distance(&sorted, |x| normal_cdf(x / chi.max(f64::MIN_POSITIVE)));
    Ok(HittingReport {
        a: cfg.a,
        tau: limit.tau,
        slope: limit.slope,
        numerator_std,
        chi,
        replicas: cfg.replicas,
        never_hit,
        failed,
        ks,
        mean: m,
        std: sd,
        boundary_start: limit.boundary_start,
        admissibility: adm,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialLaw;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flat_grid(t: f64) -> DensityGrid {
        solve_porous_medium(
            &Coefficient::Constant([0.0]),
            &Coefficient::Constant([1.0]),
            &InitialLaw::Gaussian([0.0, 1.0]),
            t,
            &GridConfig {
                dx: 0.05,
                ..GridConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn flat_entropy_limit_hits_minus_one_at_time_one() {
        // H*(t) = -(1 + t)/2, so a = -1 is hit at tau = 1 with slope -1/2.
        let grid = flat_grid(1.2);
        let b = Coefficient::Constant([0.0]);
        let s = Coefficient::Constant([1.0]);
        let hit = limit_hitting_time(&grid, &b, &s, ObservableKind::Entropy, -1.0).unwrap();
        assert_abs_diff_eq!(hit.tau, 1.0, epsilon = 5e-3);
        assert_abs_diff_eq!(hit.slope, -0.5, epsilon = 5e-3);
        assert_abs_diff_eq!(hit.initial_value, -0.5, epsilon = 5e-3);
        assert!(!hit.boundary_start);

        let hit2 = limit_hitting_time(&grid, &b, &s, ObservableKind::Entropy, -0.75).unwrap();
        assert_abs_diff_eq!(hit2.tau, 0.5, epsilon = 5e-3);
        assert_abs_diff_eq!(hit2.slope, -0.5, epsilon = 5e-3);
    }

    #[test]
    fn level_at_the_start_hits_immediately() {
        let grid = flat_grid(0.5);
        let b = Coefficient::Constant([0.0]);
        let s = Coefficient::Constant([1.0]);
        let z0 = limiting_observable_at(&grid, ObservableKind::Entropy, 0).unwrap();
        let hit = limit_hitting_time(&grid, &b, &s, ObservableKind::Entropy, z0).unwrap();
        assert_eq!(hit.tau, 0.0);
        assert!(hit.boundary_start);
    }

    #[test]
    fn unreachable_level_is_a_domain_error() {
        let grid = flat_grid(0.5);
        let b = Coefficient::Constant([0.0]);
        let s = Coefficient::Constant([1.0]);
        let err = limit_hitting_time(&grid, &b, &s, ObservableKind::Entropy, -5.0);
        assert!(matches!(err, Err(Error::Domain(_))), "got {err:?}");
        // A level above the whole path is equally unreachable.
        let err_hi = limit_hitting_time(&grid, &b, &s, ObservableKind::Entropy, 0.0);
        assert!(err_hi.is_err());
    }

    #[test]
    fn empirical_crossings_interpolate_linearly() {
        // Starts at the level.
        assert_eq!(empirical_hitting_time(&[0.0, 1.0], &[2.0, 1.0], 2.0), 0.0);
        // Strictly decreasing from a+1 to a-1 over [0, 1] crosses at 1/2.
        let a = 0.3;
        assert_abs_diff_eq!(
            empirical_hitting_time(&[0.0, 1.0], &[a + 1.0, a - 1.0], a),
            0.5,
            epsilon = 1e-15
        );
        // Never-crossing path yields the infinite sentinel.
        assert!(empirical_hitting_time(&[0.0, 1.0], &[1.0, 0.5], 0.0).is_infinite());
    }

    #[test]
    fn admissibility_examples() {
        let b0 = Coefficient::Constant([0.0]);
        let s1 = Coefficient::Constant([1.0]);
        let h0 = -0.5;
        let ok = admissible_level_check(&b0, &s1, ObservableKind::Entropy, h0 - 0.3, h0);
        assert!(ok.admissible, "{}", ok.reason);
        let above = admissible_level_check(&b0, &s1, ObservableKind::Entropy, h0 + 0.1, h0);
        assert!(!above.admissible);
        // b(r) = -r makes b + sigma^2/2 decreasing.
        let bdec = Coefficient::Affine([0.0, -1.0]);
        let mono = admissible_level_check(&bdec, &s1, ObservableKind::Entropy, h0 - 0.3, h0);
        assert!(!mono.admissible);
        assert!(mono.reason.contains("monotonicity"), "{}", mono.reason);
        // Positive observables need positive levels.
        let pos = admissible_level_check(
            &b0,
            &s1,
            ObservableKind::LpDiversity { p: 0.5 },
            -0.1,
            1.0,
        );
        assert!(!pos.admissible);
    }

    #[test]
    fn hitting_experiment_smoke_run_is_consistent() {
        let cfg = HittingConfig {
            model: ModelSpec {
                n: 100,
                t_horizon: 0.8,
                dt: 0.01,
                seed: 5,
                b: Coefficient::Constant([0.0]),
                sigma: Coefficient::Constant([1.0]),
                lambda: InitialLaw::Gaussian([0.0, 1.0]),
            },
            kind: ObservableKind::Entropy,
            a: -0.7,
            replicas: 200,
            grid: GridConfig {
                dx: 0.1,
                ..GridConfig::default()
            },
            override_admissibility: false,
        };
        let report = hitting_clt_experiment(&cfg).unwrap();
        assert_abs_diff_eq!(report.tau, 0.4, epsilon = 0.01);
        assert_abs_diff_eq!(report.slope, -0.5, epsilon = 0.01);
        // chi is the numerator std over |slope| by construction.
        assert_abs_diff_eq!(
            report.chi,
            report.numerator_std / report.slope.abs(),
            epsilon = 1e-12
        );
        assert!(report.failed == 0, "failed replicas: {}", report.failed);
        assert!(
            report.never_hit * 20 <= report.replicas,
            "too many never-hit replicas: {}",
            report.never_hit
        );
        // Loose smoke bounds; the acceptance suite pins the tight ones.
        assert!(
            (report.std / report.chi - 1.0).abs() < 0.5,
            "std {} vs chi {}",
            report.std,
            report.chi
        );
        assert!(report.ks < 0.25, "ks = {}", report.ks);
        assert!(
            report.mean.abs() < 5.0 * report.chi / (report.samples.len() as f64).sqrt() + 0.5,
            "mean {} too far from 0",
            report.mean
        );
    }

    #[test]
    fn truncation_fraction_does_not_grow_with_n() {
        // The never-hit fraction within the tau + 1 window shrinks (weakly)
        // as n grows.
        let mut fractions = Vec::new();
        for n in [250usize, 1000] {
            let cfg = HittingConfig {
                model: ModelSpec {
                    n,
                    t_horizon: 0.6,
                    dt: 0.02,
                    seed: 17,
                    b: Coefficient::Constant([0.0]),
                    sigma: Coefficient::Constant([1.0]),
                    lambda: InitialLaw::Gaussian([0.0, 1.0]),
                },
                kind: ObservableKind::Entropy,
                a: -0.65,
                replicas: 120,
                grid: GridConfig {
                    dx: 0.1,
                    ..GridConfig::default()
                },
                override_admissibility: false,
            };
            let report = hitting_clt_experiment(&cfg).unwrap();
            fractions.push(report.never_hit as f64 / report.replicas as f64);
        }
        assert!(
            fractions[1] <= fractions[0] + 0.05,
            "never-hit fraction grew with n: {fractions:?}"
        );
    }

    proptest! {
        #[test]
        fn deeper_levels_hit_later_on_nonincreasing_paths(
            drops in proptest::collection::vec(0.0f64..0.5, 5..40),
            a1 in -3.0f64..0.0,
            gap in 0.01f64..2.0,
        ) {
            // Build a nonincreasing path from 1.0 downward.
            let mut z = vec![1.0f64];
            for d in &drops {
                z.push(z.last().unwrap() - d);
            }
            let times: Vec<f64> = (0..z.len()).map(|i| i as f64 * 0.1).collect();
            let a2 = a1 - gap;
            let t1 = empirical_hitting_time(&times, &z, a1);
            let t2 = empirical_hitting_time(&times, &z, a2);
            prop_assert!(t2 >= t1, "deeper level hit earlier: {t2} < {t1}");
        }
    }
}
