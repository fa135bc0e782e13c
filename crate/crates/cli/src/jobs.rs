//! Experiment runners behind the CLI: one typed config per kind, each
//! producing a result document, embedded sanity assertions, and data files
//! written to the output directory.
//!
//! Every runner is deterministic given its config: replica randomness comes
//! from counter-based streams keyed by the config's seed, and parallel
//! reductions collect per-replica values in replica order before folding,
//! so the emitted numbers do not depend on the worker count.

use rankfield_core::fluct::{clt_experiment, CltConfig};
use rankfield_core::hitting::{hitting_clt_experiment, HittingConfig};
use rankfield_core::model::{Coefficient, InitialLaw, ModelSpec, ObservableKind};
use rankfield_core::observables::general_observable;
use rankfield_core::pde::{solve_porous_medium, GridConfig};
use rankfield_core::portfolio::{
    concentration_experiment, generating_from_observable, portfolio_ledger, self_financing_value,
    ConcentrationConfig, ConcentrationStats, PortfolioMode,
};
use rankfield_core::sim::{coupling_error, simulate_coupled, simulate_final, simulate_rank_based};
use rankfield_core::stats::{least_squares_slope, wasserstein1_vs_grid, SortedSample};
use rankfield_core::Error;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use std::path::Path;

/// How a run failed, mapped to the process exit codes: usage problems exit
/// with 2 and only a message, numerical failures exit with 1 and leave a
/// diagnostic file.
pub enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        match err {
            Error::InvalidParameter(msg) => Failure::Usage(msg),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

/// One verified sanity check embedded in the result document.
pub struct Assertion {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Assertion {
            name,
            passed,
            detail,
        }
    }

    pub fn to_value(&self) -> Value {
        json!({"name": self.name, "passed": self.passed, "detail": self.detail})
    }
}

/// Runner output: the `data` section of result.json, the embedded
/// assertions, and the names of the data files written under the out dir.
pub struct RunOutput {
    pub data: Value,
    pub assertions: Vec<Assertion>,
    pub artifacts: Vec<String>,
}

/// Parses and runs the experiment `kind` on `config`, writing data files
/// into `out`.
pub fn dispatch(kind: &str, config: &Value, out: &Path) -> Result<RunOutput, Failure> {
    match kind {
        "simulate" => run_simulate(&parse::<SimulateJob>(config)?, out),
        "hydrolimit" => run_hydrolimit(&parse::<HydrolimitJob>(config)?, out),
        "clt" => run_clt(&parse::<CltConfig>(config)?, out),
        "hitting" => run_hitting(&parse::<HittingConfig>(config)?, out),
        "portfolio" => run_portfolio(&parse::<PortfolioJob>(config)?, out),
        "concentration" => run_concentration(&parse::<ConcentrationJob>(config)?, out),
        "convergence" => run_convergence(&parse::<ConvergenceJob>(config)?, out),
        other => Err(Failure::Usage(format!("unknown experiment kind {other}"))),
    }
}

fn parse<T: DeserializeOwned>(config: &Value) -> Result<T, Failure> {
    serde_json::from_value(config.clone())
        .map_err(|e| Failure::Usage(format!("invalid config: {e}")))
}

fn write_file(out: &Path, name: &str, contents: &[u8]) -> Result<(), Failure> {
    std::fs::write(out.join(name), contents)
        .map_err(|e| Failure::Numerical(format!("cannot write {name}: {e}")))
}

fn to_value<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("report serialization cannot fail")
}

/// Writes a one-column CSV of samples.
fn samples_csv(samples: &[f64]) -> String {
    let mut csv = String::from("sample\n");
    for s in samples {
        csv.push_str(&format!("{s:.16e}\n"));
    }
    csv
}

fn default_replica() -> u64 {
    0
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_oracle_tolerance() -> f64 {
    0.05
}

// ---------------------------------------------------------------------------
// simulate

/// One particle-system path with observable time series.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateJob {
    pub model: ModelSpec,
    /// Observables evaluated along the path, in the CLT normalization.
    #[serde(default)]
    pub observables: Vec<ObservableKind>,
    /// Replica index of the noise streams.
    #[serde(default = "default_replica")]
    pub replica: u64,
    /// Keep every k-th recorded step in observables.csv (the final step is
    /// always kept).
    #[serde(default = "one")]
    pub record_every: usize,
    /// Also write the full particle path as path.csv (time,particle,x).
    #[serde(default)]
    pub record_path: bool,
}

fn run_simulate(job: &SimulateJob, out: &Path) -> Result<RunOutput, Failure> {
    if job.record_every == 0 {
        return Err(Failure::Usage("record_every must be at least 1".into()));
    }
    let path = simulate_rank_based(&job.model, job.replica)?;
    let specs = job
        .observables
        .iter()
        .map(|k| k.spec())
        .collect::<rankfield_core::Result<Vec<_>>>()?;

    let steps = path.times.len();
    let mut csv = String::from("t");
    for kind in &job.observables {
        csv.push(',');
        csv.push_str(&kind.label());
    }
    csv.push('\n');
    let mut finals = Map::new();
    for k in 0..steps {
        if k % job.record_every != 0 && k != steps - 1 {
            continue;
        }
        csv.push_str(&format!("{:.16e}", path.times[k]));
        for (kind, spec) in job.observables.iter().zip(&specs) {
            let v = general_observable(spec, &path.positions[k])?;
            csv.push_str(&format!(",{v:.16e}"));
            if k == steps - 1 {
                finals.insert(kind.label(), json!(v));
            }
        }
        csv.push('\n');
    }

    let mut sorted_final = path.final_positions().to_vec();
    sorted_final.sort_by(f64::total_cmp);
    let mut pos_csv = String::from("x\n");
    for x in &sorted_final {
        pos_csv.push_str(&format!("{x:.16e}\n"));
    }

    let mut artifacts = vec!["observables.csv".to_string(), "final_positions.csv".to_string()];
    write_file(out, "observables.csv", csv.as_bytes())?;
    write_file(out, "final_positions.csv", pos_csv.as_bytes())?;
    if job.record_path {
        let mut buf = Vec::new();
        path.write_csv(&mut buf)
            .map_err(|e| Failure::Numerical(format!("cannot render path.csv: {e}")))?;
        write_file(out, "path.csv", &buf)?;
        artifacts.push("path.csv".to_string());
    }

    let all_finite = sorted_final.iter().all(|x| x.is_finite());
    let finals_finite = finals
        .values()
        .all(|v| v.as_f64().is_some_and(f64::is_finite));
    let assertions = vec![
        Assertion::new(
            "positions_finite",
            all_finite,
            format!(
                "final position range [{:.6e}, {:.6e}]",
                sorted_final.first().copied().unwrap_or(f64::NAN),
                sorted_final.last().copied().unwrap_or(f64::NAN)
            ),
        ),
        Assertion::new(
            "observables_finite",
            finals_finite,
            format!("{} observables at the horizon", finals.len()),
        ),
    ];
    let data = json!({
        "n": job.model.n,
        "replica": job.replica,
        "t_final": path.times.last(),
        "max_displacement": path.max_displacement(),
        "finals": Value::Object(finals),
    });
    Ok(RunOutput {
        data,
        assertions,
        artifacts,
    })
}

// ---------------------------------------------------------------------------
// hydrolimit

/// Hydrodynamic-limit CDF solve.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydrolimitJob {
    pub b: Coefficient,
    pub sigma: Coefficient,
    pub lambda: InitialLaw,
    #[serde(rename = "T")]
    pub t_horizon: f64,
    #[serde(default)]
    pub grid: GridConfig,
}

fn run_hydrolimit(job: &HydrolimitJob, out: &Path) -> Result<RunOutput, Failure> {
    let grid = solve_porous_medium(&job.b, &job.sigma, &job.lambda, job.t_horizon, &job.grid)?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)
        .map_err(|e| Failure::Numerical(format!("cannot render solution.csv: {e}")))?;
    write_file(out, "solution.csv", &buf)?;

    let last = grid.r.last().expect("solver stores at least one row");
    let monotone = last.windows(2).all(|w| w[1] >= w[0]);
    let in_unit = last.iter().all(|r| (-1e-12..=1.0 + 1e-12).contains(r));
    let horizon_reached =
        (grid.times.last().copied().unwrap_or(f64::NAN) - job.t_horizon).abs() <= 1e-9;
    let assertions = vec![
        Assertion::new(
            "final_row_monotone",
            monotone,
            "stored CDF rows must be nondecreasing in x".into(),
        ),
        Assertion::new(
            "final_row_in_unit_interval",
            in_unit,
            format!("final row range [{:.6e}, {:.6e}]", last[0], last[last.len() - 1]),
        ),
        Assertion::new(
            "horizon_reached",
            horizon_reached,
            format!("last stored time {:.6e}", grid.times.last().unwrap_or(&f64::NAN)),
        ),
    ];
    let data = json!({
        "dx": grid.dx,
        "dt": grid.dt,
        "nodes": grid.xs.len(),
        "rows_stored": grid.times.len(),
        "x_min": grid.xs.first(),
        "x_max": grid.xs.last(),
        "t_final": grid.times.last(),
        "r_final_left": last.first(),
        "r_final_right": last.last(),
    });
    Ok(RunOutput {
        data,
        assertions,
        artifacts: vec!["solution.csv".to_string()],
    })
}

// ---------------------------------------------------------------------------
// clt

fn run_clt(cfg: &CltConfig, out: &Path) -> Result<RunOutput, Failure> {
    let report = clt_experiment(cfg)?;
    write_file(out, "samples.csv", samples_csv(&report.samples).as_bytes())?;
    let mut data = to_value(&report);
    let map = data.as_object_mut().expect("report is an object");
    map.remove("samples");
    map.insert("observable".into(), json!(cfg.kind.label()));

    let assertions = vec![
        Assertion::new(
            "predicted_variance_positive",
            report.predicted_variance.is_finite() && report.predicted_variance > 0.0,
            format!("predicted variance {:.6e}", report.predicted_variance),
        ),
        Assertion::new(
            "dropped_fraction_small",
            report.dropped * 10 <= report.replicas,
            format!("{} of {} replicas dropped", report.dropped, report.replicas),
        ),
        Assertion::new(
            "ks_in_unit_range",
            report.ks.is_finite() && (0.0..=1.0).contains(&report.ks),
            format!("KS distance {:.6e}", report.ks),
        ),
    ];
    Ok(RunOutput {
        data,
        assertions,
        artifacts: vec!["samples.csv".to_string()],
    })
}

// ---------------------------------------------------------------------------
// hitting

fn run_hitting(cfg: &HittingConfig, out: &Path) -> Result<RunOutput, Failure> {
    let report = hitting_clt_experiment(cfg)?;
    write_file(out, "samples.csv", samples_csv(&report.samples).as_bytes())?;
    let mut data = to_value(&report);
    let map = data.as_object_mut().expect("report is an object");
    map.remove("samples");
    map.insert("observable".into(), json!(cfg.kind.label()));

    let assertions = vec![
        Assertion::new(
            "chi_finite_nonnegative",
            report.chi.is_finite() && report.chi >= 0.0,
            format!("chi {:.6e}", report.chi),
        ),
        Assertion::new(
            "failed_fraction_small",
            report.failed * 10 <= report.replicas,
            format!("{} of {} replicas failed", report.failed, report.replicas),
        ),
        Assertion::new(
            "tau_within_horizon",
            (0.0..=cfg.model.t_horizon).contains(&report.tau),
            format!("tau {:.6e} against horizon {:.6e}", report.tau, cfg.model.t_horizon),
        ),
    ];
    Ok(RunOutput {
        data,
        assertions,
        artifacts: vec!["samples.csv".to_string()],
    })
}

// ---------------------------------------------------------------------------
// portfolio

/// Functionally generated portfolio ledger on one simulated path.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioJob {
    pub model: ModelSpec,
    pub observable: ObservableKind,
    pub mode: PortfolioMode,
    #[serde(default = "default_replica")]
    pub replica: u64,
    /// Tolerance of the self-financing-oracle tracking assertion; the gap
    /// scales like sigma^2 sqrt(dt) times the portfolio tilt.
    #[serde(default = "default_oracle_tolerance")]
    pub oracle_tolerance: f64,
}

fn run_portfolio(job: &PortfolioJob, out: &Path) -> Result<RunOutput, Failure> {
    let obs = job.observable.spec()?;
    let gen = generating_from_observable(&obs, job.model.n)?;
    let path = simulate_rank_based(&job.model, job.replica)?;
    let ledger = portfolio_ledger(&path, &job.model.sigma, &gen, job.mode)?;
    let oracle = self_financing_value(&ledger.mu, &ledger.pi);

    let mut worst = 0.0f64;
    for (v, o) in ledger.value.iter().zip(&oracle) {
        worst = worst.max((v - o).abs() / o.abs().max(1e-12));
    }
    let mut min_step = f64::INFINITY;
    for w in ledger.gamma.windows(2) {
        min_step = min_step.min(w[1] - w[0]);
    }
    let value_positive = ledger.value.iter().all(|v| *v > 0.0);

    let mut buf = Vec::new();
    ledger
        .write_csv(&mut buf)
        .map_err(|e| Failure::Numerical(format!("cannot render ledger.csv: {e}")))?;
    write_file(out, "ledger.csv", &buf)?;

    let assertions = vec![
        Assertion::new(
            "excess_growth_nondecreasing",
            min_step >= -1e-8,
            format!("smallest Gamma step {min_step:.6e}"),
        ),
        Assertion::new(
            "tracks_self_financing_oracle",
            worst <= job.oracle_tolerance,
            format!(
                "max |V/V_oracle - 1| = {worst:.6e} against tolerance {:.6e}",
                job.oracle_tolerance
            ),
        ),
        Assertion::new(
            "value_positive",
            value_positive,
            "relative value must stay positive".into(),
        ),
    ];
    let data = json!({
        "observable": job.observable.label(),
        "mode": to_value(&job.mode),
        "n": job.model.n,
        "replica": job.replica,
        "t_final": ledger.times.last(),
        "psi_initial": ledger.psi.first(),
        "psi_final": ledger.psi.last(),
        "gamma_final": ledger.gamma.last(),
        "value_final": ledger.value.last(),
        "oracle_final": oracle.last(),
        "max_oracle_deviation": worst,
        "min_gamma_step": min_step,
    });
    Ok(RunOutput {
        data,
        assertions,
        artifacts: vec!["ledger.csv".to_string()],
    })
}

// ---------------------------------------------------------------------------
// concentration

/// Lower-tail concentration experiment for the excess growth rate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationJob {
    /// Model with sigma identically 1; its horizon must equal
    /// warmup + window.
    pub model: ModelSpec,
    pub observable: ObservableKind,
    pub mode: PortfolioMode,
    /// Deviation depth r > 0 below the long-run rate.
    pub r: f64,
    /// Measurement window of the bound.
    pub window: f64,
    /// Warmup time before the window starts.
    pub warmup: f64,
    pub replicas: usize,
    /// L2 norm of the initial-to-stationary gap-law density ratio.
    #[serde(default = "one_f64")]
    pub norm_ratio: f64,
    /// Horizon of the single long run behind the rate and xi statistics.
    pub rate_horizon: f64,
    /// Xi statistics override (estimated from the long run when absent).
    #[serde(default)]
    pub stats: Option<ConcentrationStats>,
    /// Eps sweep override.
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
}

fn run_concentration(job: &ConcentrationJob, out: &Path) -> Result<RunOutput, Failure> {
    let cfg = ConcentrationConfig {
        model: job.model.clone(),
        obs: job.observable.spec()?,
        mode: job.mode,
        r: job.r,
        window: job.window,
        warmup: job.warmup,
        replicas: job.replicas,
        norm_ratio: job.norm_ratio,
        rate_horizon: job.rate_horizon,
        stats: job.stats,
        eps_grid: job.eps_grid.clone(),
    };
    let report = concentration_experiment(&cfg)?;
    let mut data = to_value(&report);
    let map = data.as_object_mut().expect("report is an object");
    map.insert("observable".into(), json!(job.observable.label()));
    map.insert("mode".into(), to_value(&job.mode));

    let assertions = vec![
        Assertion::new(
            "constants_finite",
            report.c_value.is_finite() && report.prefactor.is_finite(),
            format!("c {:.6e}, prefactor {:.6e}", report.c_value, report.prefactor),
        ),
        Assertion::new(
            "bound_respected_or_vacuous",
            report.satisfied.unwrap_or(true),
            format!(
                "empirical {:.6e} against bound {:.6e} (vacuous: {})",
                report.empirical, report.bound, report.vacuous
            ),
        ),
    ];
    let _ = out;
    Ok(RunOutput {
        data,
        assertions,
        artifacts: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// convergence

/// Which distance shrinks with n.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatistic {
    /// W1 distance between the final empirical law and the limit CDF.
    #[default]
    Wasserstein,
    /// Sup-in-time mean absolute gap to the mean-field coupling.
    Coupling,
}

impl ConvergenceStatistic {
    fn label(self) -> &'static str {
        match self {
            ConvergenceStatistic::Wasserstein => "wasserstein",
            ConvergenceStatistic::Coupling => "coupling",
        }
    }
}

/// Empirical-measure convergence-rate sweep over population sizes.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceJob {
    pub b: Coefficient,
    pub sigma: Coefficient,
    pub lambda: InitialLaw,
    #[serde(rename = "T")]
    pub t_horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Population sizes of the sweep (at least two, increasing).
    pub ns: Vec<usize>,
    /// Replicas averaged per population size.
    pub replicas: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub statistic: ConvergenceStatistic,
}

fn run_convergence(job: &ConvergenceJob, out: &Path) -> Result<RunOutput, Failure> {
    if job.ns.len() < 2 {
        return Err(Failure::Usage(
            "convergence sweep needs at least two population sizes".into(),
        ));
    }
    if job.replicas == 0 {
        return Err(Failure::Usage("replicas must be at least 1".into()));
    }
    let grid = solve_porous_medium(&job.b, &job.sigma, &job.lambda, job.t_horizon, &job.grid)?;
    let row = grid.row_at_time(job.t_horizon)?;
    let target = &grid.r[row];

    let mut means = Vec::with_capacity(job.ns.len());
    for (slot, &n) in job.ns.iter().enumerate() {
        let spec = ModelSpec {
            n,
            t_horizon: job.t_horizon,
            dt: job.dt,
            seed: job.seed,
            b: job.b.clone(),
            sigma: job.sigma.clone(),
            lambda: job.lambda.clone(),
        };
        let errors: rankfield_core::Result<Vec<f64>> = (0..job.replicas as u64)
            .into_par_iter()
            .map(|rep| {
                let replica = ((slot as u64) << 32) | rep;
                match job.statistic {
                    ConvergenceStatistic::Wasserstein => {
                        let x = simulate_final(&spec, replica)?;
                        let sorted = SortedSample::new(x)?;
                        wasserstein1_vs_grid(&sorted, &grid.xs, target)
                    }
                    ConvergenceStatistic::Coupling => {
                        let path = simulate_coupled(&spec, &grid, replica)?;
                        coupling_error(&path, 1.0)
                    }
                }
            })
            .collect();
        let errors = errors?;
        means.push(errors.iter().sum::<f64>() / errors.len() as f64);
    }

    // Coupling errors are exactly zero for constant coefficients (the
    // companion rides the same noise), so zero means are a legitimate
    // outcome with no decay rate to fit.
    let exact = means.contains(&0.0);
    let slope = if exact {
        f64::NAN
    } else {
        let log_n: Vec<f64> = job.ns.iter().map(|n| (*n as f64).ln()).collect();
        let log_e: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        least_squares_slope(&log_n, &log_e)?
    };

    let mut csv = String::from("n,mean_error\n");
    for (n, m) in job.ns.iter().zip(&means) {
        csv.push_str(&format!("{n},{m:.16e}\n"));
    }
    write_file(out, "errors.csv", csv.as_bytes())?;

    let finite_nonneg = means.iter().all(|m| m.is_finite() && *m >= 0.0);
    let assertions = vec![
        Assertion::new(
            "errors_finite_nonnegative",
            finite_nonneg,
            format!("means {means:?}"),
        ),
        Assertion::new(
            "slope_negative_or_exact",
            exact || slope < 0.0,
            if exact {
                "errors hit zero exactly; no rate to fit".to_string()
            } else {
                format!("log-log slope {slope:.6}")
            },
        ),
    ];
    let data = json!({
        "statistic": job.statistic.label(),
        "ns": job.ns,
        "means": means,
        "slope": slope,
        "replicas": job.replicas,
    });
    Ok(RunOutput {
        data,
        assertions,
        artifacts: vec!["errors.csv".to_string()],
    })
}
