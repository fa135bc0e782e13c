//! Functionally generated portfolios and their performance bounds.
//!
//! A shift-invariant observable Psi(x) = J((1/n) sum_i f_1(x_i), ...)
//! induces a degree-0 homogeneous generating function
//! Psi~(mu) = Psi(log mu_1, ..., log mu_n) on the unit simplex. The
//! multiplicatively and additively generated portfolio weights, their
//! excess growth processes Gamma, and the pathwise master formulas for the
//! relative value V(t) are assembled here, together with the concentration
//! constants and the asymptotic performance bounds they imply.

use crate::error::{Error, Result};
use crate::model::{Coefficient, ModelSpec, ObservableSpec};
use crate::model::check_stability_condition;
use crate::observables::{empirical_averages, general_observable, market_weights};
use crate::rng::{purpose, stream};
use crate::sim::{rank_counts, simulate_rank_based, ParticlePath};
use crate::stats::{normal_tail, sample_variance, wilson_interval};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Weight-generation mode: multiplicative (log-gradient weights, value by
/// the exponential master formula) or additive (gradient weights with a
/// running correction, value by the arithmetic master formula).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortfolioMode {
    Multiplicative,
    Additive,
}

/// Fixed seed for the deterministic numerical probes (homogeneity,
/// concavity, positivity) run at construction time.
const PROBE_SEED: u64 = 0x70726f6265;

/// Number of probe points per numerical check.
const PROBES: usize = 32;

/// Generating function Psi~ on the interior of the unit simplex, assembled
/// from an observable by the chain rule through x_i = log mu_i and the
/// market normalization map (so the entropy observable generates
/// Psi~(mu) = -sum mu_i log mu_i, the p-diversity observable generates
/// Psi~(mu) = (sum mu_i^p)^{1/p}, and so on).
///
/// The extension off the simplex is degree-0 homogeneous, which differs
/// from the textbook affine extensions by terms that vanish on the simplex;
/// weights, excess growth, and values are unaffected because the market
/// covariation matrix has zero row sums.
pub struct GeneratingFunction {
    pub n: usize,
    /// The observable whose J, gradient, and Hessian drive the chain rule.
    pub obs: ObservableSpec,
    /// Concavity along simplex tangent directions, established numerically.
    pub concave: bool,
    /// Positivity on the probed simplex interior, established numerically.
    pub positive: bool,
}

impl GeneratingFunction {
    fn moments(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Domain(
                "generating function needs strictly positive weights".into(),
            ));
        }
        let logs: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
        let m = empirical_averages(&self.obs, &logs);
        if !(self.obs.in_domain)(&m) {
            return Err(Error::Domain(format!(
                "weights leave the domain of {}",
                self.obs.name
            )));
        }
        Ok(m)
    }

    /// Psi~(mu): the market-scale value of the observable at the weights.
    pub fn value(&self, mu: &[f64]) -> Result<f64> {
        let m = self.moments(mu)?;
        Ok(self
            .obs
            .normalization
            .to_market((self.obs.j)(&m), self.n))
    }

    /// Gradient of Psi~ at mu (homogeneous extension).
    pub fn gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let m = self.moments(mu)?;
        let grad_j = (self.obs.grad_j)(&m);
        let scale = self.obs.normalization.market_scale(self.n);
        let inv_n = 1.0 / self.n as f64;
        let mut out = vec![0.0; mu.len()];
        for (i, (&mu_i, o)) in mu.iter().zip(out.iter_mut()).enumerate() {
            let _ = i;
            let l = mu_i.ln();
            let mut acc = 0.0;
            for (g, tf) in grad_j.iter().zip(&self.obs.test_functions) {
                acc += g * (tf.d1)(l);
            }
            *o = scale * inv_n * acc / mu_i;
        }
        Ok(out)
    }

    /// Hessian of Psi~ at mu (homogeneous extension).
    pub fn hessian(&self, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
        let m = self.moments(mu)?;
        let grad_j = (self.obs.grad_j)(&m);
        let hess_j = self
            .obs
            .hess_j
            .as_ref()
            .ok_or_else(|| {
                Error::Unavailable(format!(
                    "observable {} carries no Hessian of J",
                    self.obs.name
                ))
            })
            .map(|h| h(&m))?;
        let scale = self.obs.normalization.market_scale(self.n);
        let inv_n = 1.0 / self.n as f64;
        let n = mu.len();
        let k = self.obs.dim();
        // g[l][i] = d m_l / d mu_i = (1/n) f_l'(log mu_i) / mu_i.
        let mut g = vec![vec![0.0; n]; k];
        for (l, tf) in self.obs.test_functions.iter().enumerate() {
            for (i, &mu_i) in mu.iter().enumerate() {
                g[l][i] = inv_n * (tf.d1)(mu_i.ln()) / mu_i;
            }
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for l in 0..k {
                    for q in 0..k {
                        acc += hess_j[l][q] * g[l][i] * g[q][j];
                    }
                }
                out[i][j] = scale * acc;
                out[j][i] = out[i][j];
            }
        }
        for (i, &mu_i) in mu.iter().enumerate() {
            let l = mu_i.ln();
            let mut acc = 0.0;
            for (gj, tf) in grad_j.iter().zip(&self.obs.test_functions) {
                acc += gj * ((tf.d2)(l) - (tf.d1)(l));
            }
            out[i][i] += scale * inv_n * acc / (mu_i * mu_i);
        }
        Ok(out)
    }
}

/// Draws a uniform point of the interior of the unit simplex.
fn probe_simplex_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(1e-12..1.0);
            -u.ln()
        })
        .collect();
    let total: f64 = e.iter().sum();
    for v in &mut e {
        *v /= total;
    }
    e
}

/// Builds the generating function for `n` assets, verifying shift
/// invariance of the observable numerically (a non-invariant observable
/// has no simplex representation and is rejected) and probing concavity
/// and positivity on the simplex interior.
pub fn generating_from_observable(obs: &ObservableSpec, n: usize) -> Result<GeneratingFunction> {
    if n < 2 {
        return Err(Error::InvalidParameter(
            "portfolio generation needs at least two assets".into(),
        ));
    }
    if obs.hess_j.is_none() {
        return Err(Error::Unavailable(format!(
            "observable {} carries no Hessian of J",
            obs.name
        )));
    }
    // Homogeneity: Psi(x + r 1) = Psi(x) on Gaussian probe clouds.
    let mut rng = stream(PROBE_SEED, purpose::PROBE, 0, 0);
    for _ in 0..PROBES {
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let r: f64 = rng.sample(StandardNormal);
        let shifted: Vec<f64> = x.iter().map(|v| v + r).collect();
        let a = general_observable(obs, &x).map_err(|e| {
            Error::InvalidParameter(format!(
                "observable {} could not be probed for homogeneity: {e}",
                obs.name
            ))
        })?;
        let b = general_observable(obs, &shifted).map_err(|e| {
            Error::InvalidParameter(format!(
                "observable {} could not be probed for homogeneity: {e}",
                obs.name
            ))
        })?;
        if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
            return Err(Error::InvalidParameter(format!(
                "observable {} is not shift-invariant (Psi(x+r) - Psi(x) = {:.3e}); it generates no portfolio",
                obs.name,
                b - a
            )));
        }
    }
    let gen = GeneratingFunction {
        n,
        obs: obs.clone(),
        concave: true,
        positive: true,
    };
    let mut concave = true;
    let mut positive = true;
    let mut rng = stream(PROBE_SEED, purpose::PROBE, 1, 0);
    for _ in 0..PROBES {
        let mu = probe_simplex_point(&mut rng, n);
        let value = gen.value(&mu)?;
        if !(value > 0.0) {
            positive = false;
        }
        let hess = gen.hessian(&mu)?;
        let h_scale = hess
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        // Tangent direction: centered Gaussian coordinates.
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let vm = v.iter().sum::<f64>() / n as f64;
        for vi in &mut v {
            *vi -= vm;
        }
        let norm2: f64 = v.iter().map(|vi| vi * vi).sum();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += v[i] * hess[i][j] * v[j];
            }
        }
        if q > 1e-8 * (1.0 + h_scale * norm2) {
            concave = false;
        }
    }
    Ok(GeneratingFunction {
        concave,
        positive,
        ..gen
    })
}

/// Multiplicative weights pi_i = ((log Psi~)_i + 1 - sum_j mu_j (log Psi~)_j) mu_i.
pub fn multiplicative_weights(gen: &GeneratingFunction, mu: &[f64]) -> Result<Vec<f64>> {
    let psi = gen.value(mu)?;
    if !(psi > 0.0) {
        return Err(Error::Domain(format!(
            "multiplicative generation needs Psi~ > 0, got {psi}"
        )));
    }
    let grad = gen.gradient(mu)?;
    let log_grad: Vec<f64> = grad.iter().map(|g| g / psi).collect();
    let pivot: f64 = mu.iter().zip(&log_grad).map(|(m, g)| m * g).sum();
    Ok(mu
        .iter()
        .zip(&log_grad)
        .map(|(m, g)| (g + 1.0 - pivot) * m)
        .collect())
}

/// Additive weights pi_i = ((Psi~_i - sum_j mu_j Psi~_j) / (Psi~(mu) + shift) + 1) mu_i.
///
/// The denominator Psi~(mu) + shift must be the current relative value of the
/// strategy being traded, so that the weights and the value process describe
/// the same self-financing portfolio:
/// - for the raw additively generated strategy (value Psi~(t) + Gamma_add(t),
///   starting at Psi~(0)) pass `shift = Gamma_add(t)`;
/// - for the unit-initial-value normalization used by [`portfolio_ledger`]
///   (the raw strategy plus a constant 1 - Psi~(0) buy-and-hold position in
///   the market itself, so V(0) = 1) pass
///   `shift = 1 - Psi~(0) + Gamma_add(t)`.
///
/// The weights sum to one for any positive denominator; only the split
/// between tilt and market position depends on it.
pub fn additive_weights(gen: &GeneratingFunction, mu: &[f64], shift: f64) -> Result<Vec<f64>> {
    let psi = gen.value(mu)?;
    let denom = psi + shift;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate additive portfolio: value Psi~ + shift = {denom} is not positive"
        )));
    }
    let grad = gen.gradient(mu)?;
    let pivot: f64 = mu.iter().zip(&grad).map(|(m, g)| m * g).sum();
    Ok(mu
        .iter()
        .zip(&grad)
        .map(|(m, g)| ((g - pivot) / denom + 1.0) * m)
        .collect())
}

/// Instantaneous quadratic covariation rates d[mu_i, mu_j]/dt of the market
/// weights under rank-based dynamics, from the Ito expansion of
/// mu_i = e^{X_i} / sum_j e^{X_j}: with nu_{ik} = mu_i (sigma_i d_{ik} -
/// mu_k sigma_k), the rate matrix is the Gram product nu nu^T, expanded in
/// closed form to O(n^2):
/// rate_{ij} = mu_i mu_j (sigma_i^2 d_{ij} - mu_i sigma_i^2 - mu_j sigma_j^2
/// + sum_k mu_k^2 sigma_k^2).
pub fn quadratic_covariation_rates(mu: &[f64], sigma_at_ranks: &[f64]) -> Vec<Vec<f64>> {
    let n = mu.len();
    debug_assert_eq!(sigma_at_ranks.len(), n);
    let s2: Vec<f64> = sigma_at_ranks.iter().map(|s| s * s).collect();
    let quad: f64 = mu.iter().zip(&s2).map(|(m, s)| m * m * s).sum();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut v = quad - mu[i] * s2[i] - mu[j] * s2[j];
            if i == j {
                v += s2[i];
            }
            out[i][j] = mu[i] * mu[j] * v;
        }
    }
    out
}

/// Time series of one portfolio along one market path: weights, excess
/// growth Gamma, and relative value V from the pathwise master formula.
#[derive(Debug, Clone)]
pub struct PortfolioLedger {
    pub mode: PortfolioMode,
    pub times: Vec<f64>,
    /// Market weights per step.
    pub mu: Vec<Vec<f64>>,
    /// Portfolio weights per step.
    pub pi: Vec<Vec<f64>>,
    /// Generating function values Psi~(mu(t)).
    pub psi: Vec<f64>,
    /// Excess growth Gamma(t), left-point time integral.
    pub gamma: Vec<f64>,
    /// Relative value V(t) from the master formula, V(0) = 1.
    pub value: Vec<f64>,
    /// Instantaneous integrand xi(t) = sum_ij W_ij(t) rate_ij(t), where W is
    /// the Hessian of Psi~ (divided by Psi~ in multiplicative mode); the
    /// excess growth increments are -xi/2 dt.
    pub xi: Vec<f64>,
}

impl PortfolioLedger {
    /// CSV rows t, V, Gamma, Psi_value.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,V,Gamma,Psi_value")?;
        for (k, t) in self.times.iter().enumerate() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                t, self.value[k], self.gamma[k], self.psi[k]
            )?;
        }
        Ok(())
    }

    /// Gamma increment between the rows nearest to t0 and t1.
    pub fn gamma_increment(&self, t0: f64, t1: f64) -> Result<f64> {
        let row = |t: f64| -> Result<usize> {
            let dt = self.times[1] - self.times[0];
            let idx = ((t - self.times[0]) / dt).round() as usize;
            if idx >= self.times.len() {
                return Err(Error::InvalidParameter(format!(
                    "time {t} beyond the ledger horizon {}",
                    self.times[self.times.len() - 1]
                )));
            }
            Ok(idx)
        };
        Ok(self.gamma[row(t1)?] - self.gamma[row(t0)?])
    }
}

/// Builds the ledger of one generated portfolio along a simulated path.
///
/// Weights, Psi~, and the covariation rates are evaluated at every recorded
/// step; Gamma integrates -1/2 sum_ij W_ij d[mu_i, mu_j] by the left-point
/// rule, and V follows the master formula of the chosen mode.
pub fn portfolio_ledger(
    path: &ParticlePath,
    sigma: &Coefficient,
    gen: &GeneratingFunction,
    mode: PortfolioMode,
) -> Result<PortfolioLedger> {
    let steps = path.times.len();
    if steps < 2 {
        return Err(Error::InvalidParameter(
            "portfolio ledger needs at least two recorded steps".into(),
        ));
    }
    let n = path.positions[0].len();
    if n != gen.n {
        return Err(Error::InvalidParameter(format!(
            "generating function built for n = {}, path has n = {n}",
            gen.n
        )));
    }
    let mut mu_path = Vec::with_capacity(steps);
    let mut pi_path = Vec::with_capacity(steps);
    let mut psi_path = Vec::with_capacity(steps);
    let mut gamma = Vec::with_capacity(steps);
    let mut value = Vec::with_capacity(steps);
    let mut xi_path = Vec::with_capacity(steps);

    let mut idx = vec![0usize; n];
    let mut counts = vec![0usize; n];
    let mut sigmas = vec![0.0; n];
    let mut g = 0.0f64;
    let mut psi0 = 0.0f64;
    for (k, x) in path.positions.iter().enumerate() {
        let mu = market_weights(x);
        rank_counts(x, &mut idx, &mut counts);
        for (s, c) in sigmas.iter_mut().zip(&counts) {
            *s = sigma.eval(*c as f64 / n as f64);
        }
        let rates = quadratic_covariation_rates(&mu, &sigmas);
        let psi = gen.value(&mu)?;
        if k == 0 {
            psi0 = psi;
        }
        let hess = gen.hessian(&mu)?;
        let mut xi = 0.0;
        for i in 0..n {
            for j in 0..n {
                xi += hess[i][j] * rates[i][j];
            }
        }
        if mode == PortfolioMode::Multiplicative {
            if !(psi > 0.0) {
                return Err(Error::Domain(format!(
                    "multiplicative generation needs Psi~ > 0, got {psi} at t = {}",
                    path.times[k]
                )));
            }
            xi /= psi;
        }
        let pi = match mode {
            PortfolioMode::Multiplicative => multiplicative_weights(gen, &mu)?,
            // Denominator is the running value 1 + Psi~(t) - Psi~(0) + Gamma(t)
            // of the V(0) = 1 normalization, so weights and value self-finance
            // together.
            PortfolioMode::Additive => additive_weights(gen, &mu, 1.0 - psi0 + g)?,
        };
        let pi_sum: f64 = pi.iter().sum();
        if (pi_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!(
                "portfolio weights sum to {pi_sum} at t = {}",
                path.times[k]
            )));
        }
        let v = match mode {
            PortfolioMode::Multiplicative => psi / psi0 * g.exp(),
            PortfolioMode::Additive => 1.0 + psi - psi0 + g,
        };
        mu_path.push(mu);
        pi_path.push(pi);
        psi_path.push(psi);
        gamma.push(g);
        value.push(v);
        xi_path.push(xi);
        if k + 1 < steps {
            let dt = path.times[k + 1] - path.times[k];
            g -= 0.5 * xi * dt;
        }
    }
    Ok(PortfolioLedger {
        mode,
        times: path.times.clone(),
        mu: mu_path,
        pi: pi_path,
        psi: psi_path,
        gamma,
        value,
        xi: xi_path,
    })
}

/// Independent wealth oracle: the relative value of a self-financing
/// portfolio rebalanced to the weights pi(t_k) at each step is
/// V(t_{k+1}) = V(t_k) sum_i pi_i(t_k) mu_i(t_{k+1}) / mu_i(t_k).
pub fn self_financing_value(mu: &[Vec<f64>], pi: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(mu.len());
    let mut v = 1.0;
    out.push(v);
    for k in 0..mu.len() - 1 {
        let growth: f64 = pi[k]
            .iter()
            .zip(&mu[k + 1])
            .zip(&mu[k])
            .map(|((p, m_next), m_now)| p * m_next / m_now)
            .sum();
        v *= growth;
        out.push(v);
    }
    out
}

/// Long-run excess growth rate estimates r = Gamma(T)/T for both modes,
/// with tail-window re-estimates as a stationarity diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct RateEstimates {
    pub r_mult: f64,
    pub r_add: f64,
    /// Re-estimates from the second half of the window.
    pub r_mult_tail: f64,
    pub r_add_tail: f64,
    /// Stability of the rank gaps (head averages of b above tail averages).
    pub stable: bool,
    pub warnings: Vec<String>,
}

/// Estimates the long-run excess growth rates of both generation modes from
/// one long path of the model (horizon = the model's t_horizon).
pub fn estimate_long_run_rates(
    model: &ModelSpec,
    gen: &GeneratingFunction,
    replica: u64,
) -> Result<RateEstimates> {
    model.validate()?;
    let mut warnings = Vec::new();
    let stable = check_stability_condition(&model.b, model.n);
    if !stable {
        warnings.push(
            "stability condition fails: the gap process has no stationary regime and the long-run rates may drift"
                .into(),
        );
    }
    let path = simulate_rank_based(model, replica)?;
    let mult = portfolio_ledger(&path, &model.sigma, gen, PortfolioMode::Multiplicative);
    let add = portfolio_ledger(&path, &model.sigma, gen, PortfolioMode::Additive)?;
    let horizon = *path.times.last().unwrap();
    let half = horizon / 2.0;
    let (r_mult, r_mult_tail) = match mult {
        Ok(ledger) => {
            let full = ledger.gamma.last().unwrap() / horizon;
            let tail = ledger.gamma_increment(half, horizon)? / (horizon - half);
            (full, tail)
        }
        Err(e) => {
            warnings.push(format!("multiplicative ledger unavailable: {e}"));
            (f64::NAN, f64::NAN)
        }
    };
    let r_add = add.gamma.last().unwrap() / horizon;
    let r_add_tail = add.gamma_increment(half, horizon)? / (horizon - half);
    Ok(RateEstimates {
        r_mult,
        r_add,
        r_mult_tail,
        r_add_tail,
        stable,
        warnings,
    })
}

/// Spectral prefactor of the concentration constants:
/// min_{1<=j<=n-1} (sum_{i<=j} b(i/n) - (j/n) sum_i b(i/n))^2 / (2 - 2cos(pi/n)).
pub fn concentration_prefactor(b: &Coefficient, n: usize) -> f64 {
    assert!(n >= 2, "concentration prefactor needs n >= 2");
    let total: f64 = (1..=n).map(|i| b.eval(i as f64 / n as f64)).sum();
    let mut head = 0.0;
    let mut min_sq = f64::INFINITY;
    for j in 1..n {
        head += b.eval(j as f64 / n as f64);
        let dev = head - (j as f64 / n as f64) * total;
        min_sq = min_sq.min(dev * dev);
    }
    min_sq / (2.0 - 2.0 * (std::f64::consts::PI / n as f64).cos())
}

/// Range statistics of the instantaneous integrand xi(t) (the expression
/// whose essential range drives the concentration constants): sup, inf,
/// range, and stationary variance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConcentrationStats {
    pub sup: f64,
    pub inf: f64,
    /// sup - inf; the constant C of the first branch.
    pub range: f64,
    pub variance: f64,
}

/// Estimates the xi statistics from one long path (post-warmup samples).
pub fn estimate_concentration_stats(
    model: &ModelSpec,
    gen: &GeneratingFunction,
    mode: PortfolioMode,
    warmup: f64,
    replica: u64,
) -> Result<ConcentrationStats> {
    let path = simulate_rank_based(model, replica)?;
    let ledger = portfolio_ledger(&path, &model.sigma, gen, mode)?;
    let xi: Vec<f64> = ledger
        .times
        .iter()
        .zip(&ledger.xi)
        .filter(|(t, _)| **t >= warmup)
        .map(|(_, x)| *x)
        .collect();
    if xi.len() < 2 {
        return Err(Error::InvalidParameter(
            "warmup leaves too few samples for the xi statistics".into(),
        ));
    }
    let sup = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inf = xi.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConcentrationStats {
        sup,
        inf,
        range: sup - inf,
        variance: sample_variance(&xi),
    })
}

/// Concentration exponent c(r, eps) for one eps:
/// prefactor * max(r^2/C^2, 4 eps (eps+v) (sqrt(1 + r^2/(2 eps (eps+v)^2 M^2)) - 1)),
/// with C the range, M = max(|sup|, |inf|), and v the variance of xi.
pub fn concentration_constant(
    prefactor: f64,
    r: f64,
    eps: f64,
    stats: &ConcentrationStats,
) -> Result<f64> {
    if !(r > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidParameter(
            "concentration constant needs r > 0 and eps > 0".into(),
        ));
    }
    if stats.range == 0.0 {
        return Err(Error::InvalidParameter(
            "concentration constant needs a nonzero xi range".into(),
        ));
    }
    let m = stats.sup.abs().max(stats.inf.abs());
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(
            "concentration constant needs max(|sup|, |inf|) > 0".into(),
        ));
    }
    if stats.variance < 0.0 {
        return Err(Error::InvalidParameter(
            "negative variance supplied".into(),
        ));
    }
    let v = stats.variance;
    let first = r * r / (stats.range * stats.range);
    let inner = 1.0 + r * r / (2.0 * eps * (eps + v) * (eps + v) * m * m);
    let second = 4.0 * eps * (eps + v) * (inner.sqrt() - 1.0);
    Ok(prefactor * first.max(second))
}

/// Default log-spaced eps sweep from 1e-3 to 10.
pub fn default_eps_grid() -> Vec<f64> {
    let points = 61;
    (0..points)
        .map(|k| 10f64.powf(-3.0 + 4.0 * k as f64 / (points - 1) as f64))
        .collect()
}

/// Maximizes c(r, eps) over the eps grid (the bound holds for every
/// eps > 0, so the best exponent is legitimate). Returns (c, best eps).
pub fn best_concentration_constant(
    prefactor: f64,
    r: f64,
    stats: &ConcentrationStats,
    eps_grid: Option<&[f64]>,
) -> Result<(f64, f64)> {
    let grid = match eps_grid {
        Some(g) => g.to_vec(),
        None => default_eps_grid(),
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_eps = f64::NAN;
    for &eps in &grid {
        let c = concentration_constant(prefactor, r, eps, stats)?;
        if c > best {
            best = c;
            best_eps = eps;
        }
    }
    if !best.is_finite() {
        return Err(Error::Numerical("empty eps grid".into()));
    }
    Ok((best, best_eps))
}

/// Configuration of the lower-tail concentration experiment for the excess
/// growth rate Gamma(t)/t.
#[derive(Debug, Clone)]
pub struct ConcentrationConfig {
    /// Model with sigma identically 1 (required); its t_horizon must equal
    /// warmup + window.
    pub model: ModelSpec,
    pub obs: ObservableSpec,
    pub mode: PortfolioMode,
    /// Deviation depth r > 0 below the long-run rate.
    pub r: f64,
    /// Measurement window t of the bound.
    pub window: f64,
    /// Warmup time before the window starts (approximate stationarity).
    pub warmup: f64,
    pub replicas: usize,
    /// L2 norm of the initial-to-stationary gap-law density ratio
    /// (1 when starting in stationarity).
    pub norm_ratio: f64,
    /// Horizon of the single long run behind the rate and xi statistics.
    pub rate_horizon: f64,
    /// Xi statistics override (estimated from the long run when absent).
    pub stats: Option<ConcentrationStats>,
    /// Eps sweep override.
    pub eps_grid: Option<Vec<f64>>,
}

/// Outcome of the concentration experiment: empirical lower-tail
/// probability of Gamma(t)/t against the exponential bound.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub r: f64,
    pub window: f64,
    pub prefactor: f64,
    pub c_value: f64,
    pub best_eps: f64,
    /// Long-run rate estimate r_mode of the chosen mode.
    pub long_run_rate: f64,
    /// The event threshold: Gamma(window)/window <= long_run_rate - r.
    pub threshold: f64,
    /// Exponential bound norm_ratio * exp(-c * window).
    pub bound: f64,
    /// True when the bound is not informative (>= 1): no assertion made.
    pub vacuous: bool,
    pub successes: usize,
    pub replicas: usize,
    pub empirical: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// empirical <= bound + Wilson half-width; None when vacuous.
    pub satisfied: Option<bool>,
    pub stats: ConcentrationStats,
    pub warnings: Vec<String>,
}

/// Two-sided z for the 95% Wilson interval.
const WILSON_Z: f64 = 1.959963984540054;

pub fn concentration_experiment(cfg: &ConcentrationConfig) -> Result<ConcentrationReport> {
    cfg.model.validate()?;
    if !cfg.model.sigma.is_identically_one() {
        return Err(Error::InvalidParameter(
            "the concentration estimate requires sigma identically 1".into(),
        ));
    }
    if !check_stability_condition(&cfg.model.b, cfg.model.n) {
        return Err(Error::InvalidParameter(
            "the concentration estimate requires the stability condition on b".into(),
        ));
    }
    if (cfg.warmup + cfg.window - cfg.model.t_horizon).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "model horizon {} must equal warmup {} + window {}",
            cfg.model.t_horizon, cfg.warmup, cfg.window
        )));
    }
    let gen = generating_from_observable(&cfg.obs, cfg.model.n)?;
    let mut warnings = Vec::new();
    if cfg.mode == PortfolioMode::Multiplicative && !gen.positive {
        warnings.push("generating function is not positive on probes".into());
    }
    if !gen.concave {
        warnings.push("generating function is not concave on probes".into());
    }

    // Long single run for the rate and the xi statistics; replica id far
    // outside the experiment range.
    let mut long_model = cfg.model.clone();
    let steps = (cfg.rate_horizon / cfg.model.dt).ceil().max(1.0);
    long_model.t_horizon = steps * cfg.model.dt;
    let rates = estimate_long_run_rates(&long_model, &gen, u64::MAX)?;
    let long_run_rate = match cfg.mode {
        PortfolioMode::Multiplicative => rates.r_mult,
        PortfolioMode::Additive => rates.r_add,
    };
    if !long_run_rate.is_finite() {
        return Err(Error::Numerical(
            "long-run rate estimate unavailable".into(),
        ));
    }
    warnings.extend(rates.warnings.iter().cloned());
    let stats = match cfg.stats {
        Some(s) => s,
        None => estimate_concentration_stats(
            &long_model,
            &gen,
            cfg.mode,
            cfg.warmup.min(long_model.t_horizon / 4.0),
            u64::MAX,
        )?,
    };

    let prefactor = concentration_prefactor(&cfg.model.b, cfg.model.n);
    let (c_value, best_eps) =
        best_concentration_constant(prefactor, cfg.r, &stats, cfg.eps_grid.as_deref())?;
    let bound = cfg.norm_ratio * (-c_value * cfg.window).exp();
    let vacuous = bound >= 1.0;
    let threshold = long_run_rate - cfg.r;

    let sigma = cfg.model.sigma.clone();
    let outcomes: Vec<Result<bool>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let path = simulate_rank_based(&cfg.model, rep)?;
            let ledger = portfolio_ledger(&path, &sigma, &gen, cfg.mode)?;
            let end = *ledger.times.last().unwrap();
            let dgamma = ledger.gamma_increment(end - cfg.window, end)?;
            Ok(dgamma / cfg.window <= threshold)
        })
        .collect();
    let mut successes = 0usize;
    for o in outcomes {
        if o? {
            successes += 1;
        }
    }
    let empirical = successes as f64 / cfg.replicas as f64;
    let (lo, hi) = wilson_interval(successes, cfg.replicas, WILSON_Z);
    let half_width = 0.5 * (hi - lo);
    let satisfied = if vacuous {
        None
    } else {
        Some(empirical <= bound + half_width)
    };
    Ok(ConcentrationReport {
        r: cfg.r,
        window: cfg.window,
        prefactor,
        c_value,
        best_eps,
        long_run_rate,
        threshold,
        bound,
        vacuous,
        successes,
        replicas: cfg.replicas,
        empirical,
        wilson_low: lo,
        wilson_high: hi,
        satisfied,
        stats,
        warnings,
    })
}

/// Asymptotic performance bound for the random time at which a generated
/// portfolio reaches its target value: the probability of needing longer
/// than tau + s/sqrt(n) is at most
/// 2 Phi_bar(s/chi) + norm_ratio * exp(-c (tau - s/sqrt(n))).
/// The finite-n correction factor on the Gaussian term is taken as 0 and
/// the result flagged as asymptotic.
#[derive(Debug, Clone, Serialize)]
pub struct HittingBound {
    pub a: f64,
    pub tau: f64,
    pub s: f64,
    pub n: usize,
    pub chi: f64,
    pub norm_ratio: f64,
    pub c_value: f64,
    /// tau - s/sqrt(n), the time argument of the exponential term.
    pub time_gap: f64,
    pub gaussian_term: f64,
    pub exponential_term: f64,
    pub value: f64,
    /// Bound exceeds 1 and carries no information.
    pub vacuous: bool,
    /// Always true: the finite-n factor on the Gaussian term is dropped.
    pub asymptotic: bool,
}

pub fn hitting_performance_bound(
    a: f64,
    tau: f64,
    s: f64,
    n: usize,
    chi: f64,
    norm_ratio: f64,
    c_value: f64,
) -> Result<HittingBound> {
    if !(chi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "hitting bound needs chi > 0, got {chi}"
        )));
    }
    let time_gap = tau - s / (n as f64).sqrt();
    if !(time_gap > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "hitting bound needs tau - s/sqrt(n) > 0, got {time_gap}"
        )));
    }
    let gaussian_term = 2.0 * normal_tail(s / chi);
    let exponential_term = norm_ratio * (-c_value * time_gap).exp();
    let value = gaussian_term + exponential_term;
    Ok(HittingBound {
        a,
        tau,
        s,
        n,
        chi,
        norm_ratio,
        c_value,
        time_gap,
        gaussian_term,
        exponential_term,
        value,
        vacuous: value >= 1.0,
        asymptotic: true,
    })
}

/// Asymptotic fixed-time performance bound
/// Phi_bar(s/chi_t) + norm_ratio * exp(-c t), together with the value
/// threshold the bound protects: in multiplicative mode
/// (j_limit - s/sqrt(n)) / psi0 * exp((rate - r) t), in additive mode
/// 1 + j_limit - s/sqrt(n) - psi0 + (rate - r) t, where j_limit is the
/// market-scale limit observable at time t and psi0 = Psi~(mu(0)).
#[derive(Debug, Clone, Serialize)]
pub struct FixedTimeBound {
    pub t: f64,
    pub s: f64,
    pub n: usize,
    pub chi_t: f64,
    pub norm_ratio: f64,
    pub c_value: f64,
    pub mode: PortfolioMode,
    pub gaussian_term: f64,
    pub exponential_term: f64,
    pub value: f64,
    /// Value level whose shortfall probability the bound controls.
    pub threshold: f64,
    pub vacuous: bool,
    pub asymptotic: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn fixed_time_performance_bound(
    t: f64,
    s: f64,
    n: usize,
    chi_t: f64,
    norm_ratio: f64,
    c_value: f64,
    mode: PortfolioMode,
    j_limit: f64,
    psi0: f64,
    long_run_rate: f64,
    r: f64,
) -> Result<FixedTimeBound> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter("fixed-time bound needs t > 0".into()));
    }
    if !(chi_t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fixed-time bound needs chi_t > 0, got {chi_t}"
        )));
    }
    let shifted = j_limit - s / (n as f64).sqrt();
    let threshold = match mode {
        PortfolioMode::Multiplicative => {
            if !(psi0 > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "multiplicative threshold needs Psi~(mu(0)) > 0, got {psi0}"
                )));
            }
            shifted / psi0 * ((long_run_rate - r) * t).exp()
        }
        PortfolioMode::Additive => 1.0 + shifted - psi0 + (long_run_rate - r) * t,
    };
    let gaussian_term = normal_tail(s / chi_t);
    let exponential_term = norm_ratio * (-c_value * t).exp();
    let value = gaussian_term + exponential_term;
    Ok(FixedTimeBound {
        t,
        s,
        n,
        chi_t,
        norm_ratio,
        c_value,
        mode,
        gaussian_term,
        exponential_term,
        value,
        threshold,
        vacuous: value >= 1.0,
        asymptotic: true,
    })
}
