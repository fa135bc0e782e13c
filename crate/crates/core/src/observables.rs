//! Market-weight observables of the finite system and of the limit law.
//!
//! Market weights are the softmax of positions. Each observable exists in
//! two computable forms that agree exactly: the direct formula on the
//! weights (entropy, diversity, geometric mean) and the outer-map form
//! J(<f_1>, ..., <f_k>) on empirical averages of test functions, which is
//! the shape the CLT machinery consumes. On the limit side the same J is
//! applied to moments of the grid measure, and the time derivative of the
//! limit curve has a closed first-order form in terms of plain and
//! exponentially tilted moments.

use crate::error::{Error, Result};
use crate::model::{Coefficient, ObservableKind, ObservableSpec};
use crate::pde::DensityGrid;

/// Softmax market weights mu_i = e^{x_i} / sum_j e^{x_j}, shift-stabilized
/// so that any common translation of the positions cancels exactly.
pub fn market_weights(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "weights need at least one position");
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    e
}

/// Shannon entropy H(mu) = -sum mu_i log mu_i, with 0 log 0 = 0.
pub fn entropy(mu: &[f64]) -> f64 {
    mu.iter()
        .map(|&m| if m > 0.0 { -m * m.ln() } else { 0.0 })
        .sum()
}

/// l^p diversity D_p(mu) = (sum mu_i^p)^{1/p} for 0 < p < 1.
pub fn lp_diversity(mu: &[f64], p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "diversity needs 0 < p < 1, got {p}"
        )));
    }
    Ok(mu.iter().map(|m| m.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// Geometric mean (prod mu_i)^{1/n}, computed in log space.
pub fn geometric_mean(mu: &[f64]) -> f64 {
    let n = mu.len() as f64;
    let log_sum: f64 = mu.iter().map(|m| m.ln()).sum();
    (log_sum / n).exp()
}

/// Empirical averages <f_l> = (1/n) sum_i f_l(x_i) of the observable's test
/// functions.
pub fn empirical_averages(obs: &ObservableSpec, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    obs.test_functions
        .iter()
        .map(|tf| x.iter().map(|&v| (tf.f)(v)).sum::<f64>() / n)
        .collect()
}

/// Finite-n observable J(<f_1>, ..., <f_k>) from raw positions. Fails when
/// the averages fall outside the domain of J (for example after exponent
/// underflow with extremely spread-out positions).
pub fn general_observable(obs: &ObservableSpec, x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("no positions".into()));
    }
    let m = empirical_averages(obs, x);
    if !(obs.in_domain)(&m) {
        return Err(Error::Domain(format!(
            "averages {m:?} outside the domain of {}",
            obs.name
        )));
    }
    let v = (obs.j)(&m);
    if !v.is_finite() {
        return Err(Error::Numerical(format!(
            "observable {} evaluated to {v}",
            obs.name
        )));
    }
    Ok(v)
}

/// Limit observable J applied to the moments of one stored grid row.
pub fn limiting_observable_at(
    grid: &DensityGrid,
    kind: ObservableKind,
    row: usize,
) -> Result<f64> {
    let obs = kind.spec()?;
    let measure = grid.row_measure(row);
    let m: Vec<f64> = obs
        .test_functions
        .iter()
        .map(|tf| measure.moment(|x| (tf.f)(x)))
        .collect();
    if !(obs.in_domain)(&m) {
        return Err(Error::Domain(format!(
            "limit moments {m:?} outside the domain of {}",
            obs.name
        )));
    }
    Ok((obs.j)(&m))
}

/// Limit curves of several observables over all stored rows.
#[derive(Debug, Clone)]
pub struct LimitObservablePath {
    pub times: Vec<f64>,
    pub kinds: Vec<ObservableKind>,
    /// values[k][row] = observable k at stored row `row`.
    pub values: Vec<Vec<f64>>,
}

pub fn limiting_observables(
    grid: &DensityGrid,
    kinds: &[ObservableKind],
) -> Result<LimitObservablePath> {
    let mut values = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut curve = Vec::with_capacity(grid.times.len());
        for row in 0..grid.times.len() {
            curve.push(limiting_observable_at(grid, *kind, row)?);
        }
        values.push(curve);
    }
    Ok(LimitObservablePath {
        times: grid.times.clone(),
        kinds: kinds.to_vec(),
        values,
    })
}

/// Time derivative of the limit observable at one stored row, from the
/// first-order ODE form rather than finite differences.
///
/// Writing rho for the limit law at the row, rho_p for its e^{p x} tilt,
/// and evaluating coefficients at the local rank R:
/// entropy:        dH/dt = -(1/2) <sigma^2>_{rho_1}
///                         - cov_{rho_1}(x, b + sigma^2 / 2),
/// l^p diversity:  dD/dt = D ( <b + p sigma^2/2>_{rho_p}
///                             - <b + sigma^2/2>_{rho_1} ),
/// geometric mean: dS/dt = S ( <b>_rho - <b + sigma^2/2>_{rho_1} ).
pub fn limiting_drift(
    grid: &DensityGrid,
    b: &Coefficient,
    sigma: &Coefficient,
    kind: ObservableKind,
    row: usize,
) -> Result<f64> {
    let measure = grid.row_measure(row);
    let half_sq = |r: f64| 0.5 * sigma.eval(r) * sigma.eval(r);
    match kind {
        ObservableKind::Entropy => {
            let sig2 = measure.tilted_moment_xr(1.0, |_, r| 2.0 * half_sq(r));
            let mean_x = measure.tilted_moment_xr(1.0, |x, _| x);
            let mean_g = measure.tilted_moment_xr(1.0, |_, r| b.eval(r) + half_sq(r));
            let mean_xg = measure.tilted_moment_xr(1.0, |x, r| x * (b.eval(r) + half_sq(r)));
            Ok(-0.5 * sig2 - (mean_xg - mean_x * mean_g))
        }
        ObservableKind::LpDiversity { p } => {
            let value = limiting_observable_at(grid, kind, row)?;
            let up = measure.tilted_moment_xr(p, |_, r| b.eval(r) + p * half_sq(r));
            let down = measure.tilted_moment_xr(1.0, |_, r| b.eval(r) + half_sq(r));
            Ok(value * (up - down))
        }
        ObservableKind::GeometricMean => {
            let value = limiting_observable_at(grid, kind, row)?;
            let plain = measure.moment_xr(|_, r| b.eval(r));
            let down = measure.tilted_moment_xr(1.0, |_, r| b.eval(r) + half_sq(r));
            Ok(value * (plain - down))
        }
    }
}

/// Covariance gap <f g> - <f> <g> of the discrete measure putting
/// (normalized) `weights` on `points`. Nonnegative when f = g.
pub fn chebyshev_gap(
    points: &[f64],
    weights: &[f64],
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
) -> f64 {
    assert_eq!(points.len(), weights.len(), "points/weights length mismatch");
    assert!(!points.is_empty(), "empty measure");
    let total: f64 = weights.iter().sum();
    let mut mf = 0.0;
    let mut mg = 0.0;
    let mut mfg = 0.0;
    for (x, w) in points.iter().zip(weights) {
        let (fv, gv) = (f(*x), g(*x));
        mf += fv * w;
        mg += gv * w;
        mfg += fv * gv * w;
    }
    mfg / total - (mf / total) * (mg / total)
}
