//! Gaussian fluctuation field around the hydrodynamic limit.
//!
//! The centered empirical CDF sqrt(n)(F^n - R) converges to a Gaussian field
//! G with mild representation
//!
//!   G(t, x) = int beta(F_lambda(y)) p(0, y; t, x) dy
//!           + int_0^t int sigma(R) sqrt(R_x) p(s, y; t, x) dW(s, y),
//!
//! where beta is a Brownian bridge, W space-time white noise, and p the
//! transition density of the tangent diffusion dxi = b(R) dt + sigma(R) dB.
//! Two equivalent discretizations are implemented and tested against each
//! other: a forward stepped evolution that injects noise every solver step,
//! and an adjoint (backward) sweep that carries a linear functional's
//! weights to every earlier time. The backward step is the exact matrix
//! transpose of the forward step, so the two routes agree to rounding.

use crate::error::{Error, Result};
use crate::model::{Coefficient, ModelSpec, ObservableKind, ObservableSpec};
use crate::observables::general_observable;
use crate::pde::{solve_porous_medium, DensityGrid, GridConfig};
use crate::rng::{purpose, stream};
use crate::sim::simulate_final;
use crate::stats::{ks_distance, normal_cdf, SortedSample};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use rayon::prelude::*;

/// Per-step stencil coefficients of the tangent diffusion, frozen from the
/// limit grid: upwind-split drift at interfaces and diffusivity at nodes,
/// plus the noise amplitude sigma(R) sqrt(R_x).
struct StepTables {
    /// bplus[k][i] = max(b, 0) at interface i+1/2 of solver row k.
    bplus: Vec<Vec<f64>>,
    /// bminus[k][i] = min(b, 0) at interface i+1/2 of solver row k.
    bminus: Vec<Vec<f64>>,
    /// dcoef[k][j] = sigma(R)^2 / 2 at node j of solver row k.
    dcoef: Vec<Vec<f64>>,
    /// amp[k][j] = sigma(R) sqrt(R_x) at node j of solver row k.
    amp: Vec<Vec<f64>>,
}

fn build_tables(
    grid: &DensityGrid,
    b: &Coefficient,
    sigma: &Coefficient,
    rows: usize,
) -> StepTables {
    let n = grid.xs.len();
    let mut bplus = Vec::with_capacity(rows);
    let mut bminus = Vec::with_capacity(rows);
    let mut dcoef = Vec::with_capacity(rows);
    let mut amp = Vec::with_capacity(rows);
    for k in 0..rows {
        let r = &grid.r[k];
        let rx = &grid.rx[k];
        let mut bp = Vec::with_capacity(n - 1);
        let mut bm = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let v = b.eval(0.5 * (r[i] + r[i + 1]));
            bp.push(v.max(0.0));
            bm.push(v.min(0.0));
        }
        let mut dc = Vec::with_capacity(n);
        let mut am = Vec::with_capacity(n);
        for j in 0..n {
            let s = sigma.eval(r[j]);
            dc.push(0.5 * s * s);
            am.push(s * rx[j].max(0.0).sqrt());
        }
        bplus.push(bp);
        bminus.push(bm);
        dcoef.push(dc);
        amp.push(am);
    }
    StepTables {
        bplus,
        bminus,
        dcoef,
        amp,
    }
}

/// One forward step of the tangent equation in conservative upwind form,
/// acting on a function of x with zero Dirichlet edges.
fn step_forward(
    tables: &StepTables,
    k: usize,
    dt: f64,
    dx: f64,
    g: &[f64],
    out: &mut [f64],
) {
    let n = g.len();
    let inv_dx = 1.0 / dx;
    let inv_dx2 = inv_dx * inv_dx;
    let bp = &tables.bplus[k];
    let bm = &tables.bminus[k];
    let dc = &tables.dcoef[k];
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        let flux_right = bp[i] * g[i] + bm[i] * g[i + 1];
        let flux_left = bp[i - 1] * g[i - 1] + bm[i - 1] * g[i];
        out[i] = g[i] - dt * inv_dx * (flux_right - flux_left)
            + dt * inv_dx2
                * (dc[i + 1] * g[i + 1] - 2.0 * dc[i] * g[i] + dc[i - 1] * g[i - 1]);
    }
}

/// One backward step: the exact matrix transpose of `step_forward` (zero
/// Dirichlet edges in both directions).
fn step_backward(
    tables: &StepTables,
    k: usize,
    dt: f64,
    dx: f64,
    u: &[f64],
    out: &mut [f64],
) {
    let n = u.len();
    let inv_dx = 1.0 / dx;
    let inv_dx2 = inv_dx * inv_dx;
    let bp = &tables.bplus[k];
    let bm = &tables.bminus[k];
    let dc = &tables.dcoef[k];
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for j in 1..n - 1 {
        out[j] = u[j]
            + dt * inv_dx * (bp[j] * (u[j + 1] - u[j]) + bm[j - 1] * (u[j] - u[j - 1]))
            + dt * inv_dx2 * dc[j] * (u[j + 1] - 2.0 * u[j] + u[j - 1]);
    }
}

/// Everything needed to sample the fluctuation field at one output time:
/// stencil tables for rows 0..t_row, noise amplitudes, and the initial CDF
/// levels feeding the Brownian bridge.
pub struct FluctuationContext {
    pub xs: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    /// Output time, equal to `t_row` solver steps.
    pub t: f64,
    /// Solver row index of the output time.
    pub t_row: usize,
    /// Initial CDF values at the nodes, the bridge's evaluation levels.
    levels: Vec<f64>,
    tables: StepTables,
}

/// Sampled field at the context's output time, split into its initial-
/// condition part and its dynamic-noise part (g = init + noise).
#[derive(Debug, Clone)]
pub struct FluctuationField {
    pub t: f64,
    pub xs: Vec<f64>,
    pub g: Vec<f64>,
    pub init_term: Vec<f64>,
    pub noise_term: Vec<f64>,
}

impl FluctuationField {
    /// Linear functional int f'(x) G(t, x) dx of the field, the pairing
    /// through which the CLT for J(<f>) is expressed.
    pub fn functional(&self, d1: impl Fn(f64) -> f64) -> f64 {
        let dx = self.xs[1] - self.xs[0];
        dx * self
            .xs
            .iter()
            .zip(&self.g)
            .map(|(x, g)| d1(*x) * g)
            .sum::<f64>()
    }
}

/// Backward-propagated weights u(s, y) of one linear functional: pairing
/// u(s, .) with a disturbance injected at solver row s gives the same
/// number as evolving the disturbance forward and pairing with f' at the
/// output time.
pub struct FunctionalWeights {
    /// u[k][y] for solver rows k = 0..=t_row; u[t_row] is the terminal f'.
    u: Vec<Vec<f64>>,
}

impl FunctionalWeights {
    /// Weights at solver row 0 (the initial time).
    pub fn initial(&self) -> &[f64] {
        &self.u[0]
    }

    /// Weights at solver row k.
    pub fn at_row(&self, k: usize) -> &[f64] {
        &self.u[k]
    }
}

impl FluctuationContext {
    /// Builds the context for output time `t` from a limit grid solved with
    /// `store_every = 1` (every solver row present).
    pub fn new(
        grid: &DensityGrid,
        b: &Coefficient,
        sigma: &Coefficient,
        t: f64,
    ) -> Result<Self> {
        if grid.store_every != 1 {
            return Err(Error::InvalidParameter(
                "fluctuation machinery needs a grid stored at every solver step".into(),
            ));
        }
        let t_row = grid.row_at_time(t)?;
        if t_row == 0 {
            return Err(Error::InvalidParameter(
                "fluctuation output time must be at least one solver step".into(),
            ));
        }
        let mut levels: Vec<f64> = grid.r[0].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let n = levels.len();
        levels[0] = levels[0].clamp(0.0, 1.0);
        levels[n - 1] = levels[n - 1].clamp(0.0, 1.0);
        Ok(FluctuationContext {
            xs: grid.xs.clone(),
            dx: grid.dx,
            dt: grid.dt,
            t: grid.times[t_row],
            t_row,
            levels,
            tables: build_tables(grid, b, sigma, t_row),
        })
    }

    /// Samples the Brownian bridge beta at the initial CDF levels by
    /// sequential conditioning. One Gaussian draw is consumed per node
    /// regardless of the level values, keeping the stream aligned between
    /// the field route and the functional route.
    fn sample_bridge(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut beta = vec![0.0; self.levels.len()];
        let mut prev_u = 0.0f64;
        let mut prev_b = 0.0f64;
        for (i, &level) in self.levels.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            if level <= prev_u {
                beta[i] = prev_b;
                continue;
            }
            if prev_u >= 1.0 - 1e-15 {
                beta[i] = 0.0;
                continue;
            }
            let rem = 1.0 - prev_u;
            let mean = prev_b * (1.0 - level) / rem;
            let var = (level - prev_u) * (1.0 - level) / rem;
            beta[i] = mean + var.max(0.0).sqrt() * z;
            prev_u = level;
            prev_b = beta[i];
        }
        beta
    }

    /// Forward simulation of one field replica: evolve the bridge initial
    /// condition and inject sigma(R) sqrt(R_x) white noise every step.
    pub fn simulate_field(&self, seed: u64, replica: u64) -> FluctuationField {
        let n = self.xs.len();
        let mut bridge_rng = stream(seed, purpose::BRIDGE, replica, 0);
        let mut g = self.sample_bridge(&mut bridge_rng);
        g[0] = 0.0;
        g[n - 1] = 0.0;
        let mut h = vec![0.0; n];
        let mut scratch = vec![0.0; n];

        let mut noise_rng = stream(seed, purpose::NOISE, replica, 0);
        let noise_scale = (self.dt * self.dx).sqrt() / self.dx;
        for k in 0..self.t_row {
            let amp = &self.tables.amp[k];
            for j in 1..n - 1 {
                let z: f64 = noise_rng.sample(StandardNormal);
                h[j] += amp[j] * noise_scale * z;
            }
            step_forward(&self.tables, k, self.dt, self.dx, &g, &mut scratch);
            std::mem::swap(&mut g, &mut scratch);
            step_forward(&self.tables, k, self.dt, self.dx, &h, &mut scratch);
            std::mem::swap(&mut h, &mut scratch);
        }
        let total: Vec<f64> = g.iter().zip(&h).map(|(a, b)| a + b).collect();
        FluctuationField {
            t: self.t,
            xs: self.xs.clone(),
            g: total,
            init_term: g,
            noise_term: h,
        }
    }

    /// Backward sweep carrying the terminal weights f'(x) to every earlier
    /// solver row.
    pub fn functional_weights(&self, terminal: &[f64]) -> Result<FunctionalWeights> {
        let n = self.xs.len();
        if terminal.len() != n {
            return Err(Error::InvalidParameter(format!(
                "terminal weights have length {}, grid has {n} nodes",
                terminal.len()
            )));
        }
        let mut u = vec![vec![0.0; n]; self.t_row + 1];
        u[self.t_row].copy_from_slice(terminal);
        u[self.t_row][0] = 0.0;
        u[self.t_row][n - 1] = 0.0;
        for k in (0..self.t_row).rev() {
            let (head, tail) = u.split_at_mut(k + 1);
            step_backward(&self.tables, k, self.dt, self.dx, &tail[0], &mut head[k]);
        }
        Ok(FunctionalWeights { u })
    }

    /// Exact covariance matrix of a family of linear functionals of the
    /// field. The initial-condition part contracts the row-0 weights
    /// against the Brownian bridge covariance min(u, v) - u v at the
    /// initial CDF levels (computed in one pass via suffix sums, the
    /// levels being nondecreasing); the dynamic part accumulates
    /// dt dx sum_j (u_k[j] amp_k[j])^2 over the solver rows. No sampling
    /// error enters.
    pub fn functional_covariance(&self, weights: &[FunctionalWeights]) -> Vec<Vec<f64>> {
        let n = self.xs.len();
        let m = weights.len();
        let mut cov = vec![vec![0.0; m]; m];
        // Effective initial weights dx * u0 on interior nodes, matching the
        // quadrature in `sample_functionals`.
        let eff: Vec<Vec<f64>> = weights
            .iter()
            .map(|w| {
                let u0 = w.initial();
                let mut a = vec![0.0; n];
                for j in 1..n - 1 {
                    a[j] = self.dx * u0[j];
                }
                a
            })
            .collect();
        for p in 0..m {
            for q in p..m {
                let a = &eff[p];
                let c = &eff[q];
                let mut suf_a = vec![0.0; n + 1];
                let mut suf_c = vec![0.0; n + 1];
                for j in (0..n).rev() {
                    suf_a[j] = suf_a[j + 1] + a[j];
                    suf_c[j] = suf_c[j + 1] + c[j];
                }
                let mut min_part = 0.0;
                let mut dot_a = 0.0;
                let mut dot_c = 0.0;
                for j in 0..n {
                    let u = self.levels[j];
                    min_part += u * (a[j] * c[j] + a[j] * suf_c[j + 1] + c[j] * suf_a[j + 1]);
                    dot_a += a[j] * u;
                    dot_c += c[j] * u;
                }
                let bridge = min_part - dot_a * dot_c;
                let mut noise = 0.0;
                for k in 0..self.t_row {
                    let amp = &self.tables.amp[k];
                    let up = &weights[p].u[k];
                    let uq = &weights[q].u[k];
                    let mut acc = 0.0;
                    for j in 1..n - 1 {
                        acc += up[j] * uq[j] * amp[j] * amp[j];
                    }
                    noise += acc;
                }
                let total = bridge + self.dt * self.dx * noise;
                cov[p][q] = total;
                cov[q][p] = total;
            }
        }
        cov
    }

    /// Samples the vector of functionals for one replica without
    /// materializing the field: bridge against the initial weights plus
    /// per-step noise against the backward weights. Uses the same random
    /// streams (and draw order) as `simulate_field`.
    pub fn sample_functionals(
        &self,
        weights: &[FunctionalWeights],
        seed: u64,
        replica: u64,
    ) -> Vec<f64> {
        let n = self.xs.len();
        let mut bridge_rng = stream(seed, purpose::BRIDGE, replica, 0);
        let bridge = self.sample_bridge(&mut bridge_rng);
        let mut out: Vec<f64> = weights
            .iter()
            .map(|w| {
                let u0 = w.initial();
                let mut acc = 0.0;
                for j in 1..n - 1 {
                    acc += u0[j] * bridge[j];
                }
                self.dx * acc
            })
            .collect();

        let mut noise_rng = stream(seed, purpose::NOISE, replica, 0);
        let sq = (self.dt * self.dx).sqrt();
        for k in 0..self.t_row {
            let amp = &self.tables.amp[k];
            for j in 1..n - 1 {
                let z: f64 = noise_rng.sample(StandardNormal);
                let kick = amp[j] * sq * z;
                if kick != 0.0 {
                    for (o, w) in out.iter_mut().zip(weights) {
                        *o += w.u[k][j] * kick;
                    }
                }
            }
        }
        out
    }
}

/// Numerical transition kernel p(s, y; t, x) of the tangent diffusion for
/// one source point: forward evolution of a discrete delta (mass 1/dx at
/// the source node) through the frozen limit coefficients.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub xs: Vec<f64>,
    pub source_row: usize,
    pub source_index: usize,
    /// Requested output rows (solver row indices).
    pub output_rows: Vec<usize>,
    /// values[k][x] = kernel at output row `output_rows[k]`.
    pub values: Vec<Vec<f64>>,
}

/// Solves the kernel forward from `(source_row, source_index)` to each of
/// `output_rows`. The grid must be stored at every solver step.
pub fn transition_kernel(
    grid: &DensityGrid,
    b: &Coefficient,
    sigma: &Coefficient,
    source_row: usize,
    source_index: usize,
    output_rows: &[usize],
) -> Result<TransitionKernel> {
    if grid.store_every != 1 {
        return Err(Error::InvalidParameter(
            "transition kernel needs a grid stored at every solver step".into(),
        ));
    }
    let n = grid.xs.len();
    if source_index == 0 || source_index >= n - 1 {
        return Err(Error::InvalidParameter(
            "kernel source must be an interior node".into(),
        ));
    }
    let max_row = output_rows.iter().copied().max().unwrap_or(source_row);
    if output_rows.iter().any(|r| *r < source_row) {
        return Err(Error::InvalidParameter(
            "kernel output rows must not precede the source row".into(),
        ));
    }
    if max_row >= grid.times.len() {
        return Err(Error::Unavailable(format!(
            "output row {max_row} beyond the stored horizon"
        )));
    }
    let tables = build_tables(grid, b, sigma, max_row.max(1));
    let mut p = vec![0.0; n];
    p[source_index] = 1.0 / grid.dx;
    let mut scratch = vec![0.0; n];
    let mut values = vec![Vec::new(); output_rows.len()];
    for (slot, row) in output_rows.iter().enumerate() {
        if *row == source_row {
            values[slot] = p.clone();
        }
    }
    for k in source_row..max_row {
        step_forward(&tables, k, grid.dt, grid.dx, &p, &mut scratch);
        std::mem::swap(&mut p, &mut scratch);
        for (slot, row) in output_rows.iter().enumerate() {
            if *row == k + 1 {
                values[slot] = p.clone();
            }
        }
    }
    Ok(TransitionKernel {
        xs: grid.xs.clone(),
        source_row,
        source_index,
        output_rows: output_rows.to_vec(),
        values,
    })
}

/// Delta-method limit covariance of an observable's functional vector
/// (int f_l' G dx)_l, estimated over independent field replicas, plus the
/// scalar variance grad_J^T Cov grad_J predicted for
/// sqrt(n) (J(<f>_n) - J(<f>_limit)).
#[derive(Debug, Clone)]
pub struct LimitCovariance {
    /// Limit moments <f_l> at the output time.
    pub moments: Vec<f64>,
    /// J at the limit moments.
    pub limit_value: f64,
    /// grad J at the limit moments.
    pub grad: Vec<f64>,
    /// Covariance of the functionals int f_l'(x) G(t, x) dx, computed
    /// exactly from the backward weights.
    pub cov: Vec<Vec<f64>>,
    /// Predicted CLT variance grad^T Cov grad.
    pub scalar_variance: f64,
}

/// Deterministic delta-method prediction of the limiting CLT variance of
/// an observable: backward weights for each test function, exact field
/// covariance, and the contraction against grad J at the limit moments.
pub fn limit_covariance(
    grid: &DensityGrid,
    b: &Coefficient,
    sigma: &Coefficient,
    obs: &ObservableSpec,
    t: f64,
) -> Result<LimitCovariance> {
    let ctx = FluctuationContext::new(grid, b, sigma, t)?;
    let row = ctx.t_row;
    let measure = grid.row_measure(row);
    let moments: Vec<f64> = obs
        .test_functions
        .iter()
        .map(|tf| measure.moment(|x| (tf.f)(x)))
        .collect();
    if !(obs.in_domain)(&moments) {
        return Err(Error::Domain(format!(
            "limit moments {moments:?} outside the domain of {}",
            obs.name
        )));
    }
    let limit_value = (obs.j)(&moments);
    let grad = (obs.grad_j)(&moments);

    let weights: Vec<FunctionalWeights> = obs
        .test_functions
        .iter()
        .map(|tf| {
            let terminal: Vec<f64> = ctx.xs.iter().map(|x| (tf.d1)(*x)).collect();
            ctx.functional_weights(&terminal)
        })
        .collect::<Result<_>>()?;

    let cov = ctx.functional_covariance(&weights);
    let dim = obs.dim();
    let mut scalar = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            scalar += grad[i] * cov[i][j] * grad[j];
        }
    }
    Ok(LimitCovariance {
        moments,
        limit_value,
        grad,
        cov,
        scalar_variance: scalar,
    })
}

/// Configuration of a finite-n versus limit CLT experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    /// Particle model; its horizon is the observation time.
    pub model: ModelSpec,
    pub kind: ObservableKind,
    /// Finite-n replicas.
    pub replicas: usize,
    /// PDE resolution (store_every is forced to 1 internally).
    #[serde(default)]
    pub grid: GridConfig,
}

/// Outcome of the CLT experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub dropped: usize,
    pub limit_value: f64,
    pub predicted_variance: f64,
    pub empirical_variance: f64,
    pub empirical_mean: f64,
    /// KS distance of the samples to N(0, predicted_variance).
    pub ks: f64,
    /// Centered and scaled samples sqrt(n)(Y_n - Y_limit).
    pub samples: Vec<f64>,
}

pub fn clt_experiment(cfg: &CltConfig) -> Result<CltReport> {
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
    let obs = cfg.kind.spec()?;
    let predicted = limit_covariance(
        &grid,
        &cfg.model.b,
        &cfg.model.sigma,
        &obs,
        cfg.model.t_horizon,
    )?;

    let sqrt_n = (cfg.model.n as f64).sqrt();
    let raw: Vec<Option<f64>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let x = simulate_final(&cfg.model, rep).ok()?;
            let v = general_observable(&obs, &x).ok()?;
            Some(sqrt_n * (v - predicted.limit_value))
        })
        .collect();
    let mut samples = Vec::with_capacity(cfg.replicas);
    let mut dropped = 0;
    for s in raw {
        match s {
            Some(v) if v.is_finite() => samples.push(v),
            _ => dropped += 1,
        }
    }
    if samples.len() < 2 {
        return Err(Error::Numerical(
            "almost all CLT replicas were dropped".into(),
        ));
    }
    let empirical_mean = crate::stats::mean(&samples);
    let empirical_variance = crate::stats::sample_variance(&samples);
    let sorted = SortedSample::new(samples.clone())?;
    let sd = predicted.scalar_variance.max(f64::MIN_POSITIVE).sqrt();
    let ks = ks_distance(&sorted, |x| normal_cdf(x / sd));
    Ok(CltReport {
        n: cfg.model.n,
        t: cfg.model.t_horizon,
        replicas: cfg.replicas,
        dropped,
        limit_value: predicted.limit_value,
        predicted_variance: predicted.scalar_variance,
        empirical_variance,
        empirical_mean,
        ks,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{entropy_observable, InitialLaw};
    use approx::assert_abs_diff_eq;

    fn flat_grid(t: f64, dx: f64) -> DensityGrid {
        solve_porous_medium(
            &Coefficient::Constant([0.0]),
            &Coefficient::Constant([1.0]),
            &InitialLaw::Gaussian([0.0, 1.0]),
            t,
            &GridConfig {
                dx,
                store_every: Some(1),
                ..GridConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn kernel_conserves_mass_and_matches_the_gaussian_peak() {
        // b = 0, sigma = 1, one unit of time: the kernel from a central
        // source approaches the N(y, 1) density, whose peak is
        // 1/sqrt(2 pi) = 0.3989...
        let grid = flat_grid(1.0, 0.05);
        let b = Coefficient::Constant([0.0]);
        let s = Coefficient::Constant([1.0]);
        let source = grid.xs.len() / 2;
        let last = grid.times.len() - 1;
        let k = transition_kernel(&grid, &b, &s, 0, source, &[0, last]).unwrap();

        for values in &k.values {
            let mass: f64 = grid.dx * values.iter().sum::<f64>();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
            assert!(values.iter().all(|v| *v >= -1e-12), "kernel went negative");
        }
        let y = grid.xs[source];
        let peak = k.values[1][source];
        assert_abs_diff_eq!(peak, 0.3989422804014327, epsilon = 4e-3);
        // Symmetric Gaussian decay two sigmas out.
        let two_sig = source + (2.0 / grid.dx) as usize;
        let expected = (-2.0f64).exp() * 0.3989422804014327;
        assert_abs_diff_eq!(k.values[1][two_sig], expected, epsilon = 4e-3);
        let x_val = grid.xs[two_sig];
        assert!((x_val - y - 2.0).abs() < 1e-9);
    }

    #[test]
    fn backward_weights_preserve_constants_in_the_bulk() {
        let grid = flat_grid(0.5, 0.05);
        let b = Coefficient::Affine([0.5, -1.0]);
        let s = Coefficient::Constant([1.0]);
        let ctx = FluctuationContext::new(&grid, &b, &s, 0.5).unwrap();
        let terminal = vec![1.0; ctx.xs.len()];
        let w = ctx.functional_weights(&terminal).unwrap();
        for (j, x) in ctx.xs.iter().enumerate() {
            if x.abs() < 3.0 {
                assert_abs_diff_eq!(w.initial()[j], 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn field_route_and_functional_route_agree_to_rounding() {
        // The backward step is the exact transpose of the forward step, so
        // pairing the evolved field with f' must reproduce the weighted-
        // noise sum up to accumulation order.
        let grid = solve_porous_medium(
            &Coefficient::Affine([0.4, -0.8]),
            &Coefficient::Affine([0.9, 0.2]),
            &InitialLaw::Gaussian([0.2, 1.0]),
            0.3,
            &GridConfig {
                dx: 0.1,
                store_every: Some(1),
                ..GridConfig::default()
            },
        )
        .unwrap();
        let b = Coefficient::Affine([0.4, -0.8]);
        let s = Coefficient::Affine([0.9, 0.2]);
        let ctx = FluctuationContext::new(&grid, &b, &s, 0.3).unwrap();
        let obs = entropy_observable();
        let weights: Vec<FunctionalWeights> = obs
            .test_functions
            .iter()
            .map(|tf| {
                let terminal: Vec<f64> = ctx.xs.iter().map(|x| (tf.d1)(*x)).collect();
                ctx.functional_weights(&terminal).unwrap()
            })
            .collect();
        for replica in 0..5u64 {
            let field = ctx.simulate_field(77, replica);
            let via_weights = ctx.sample_functionals(&weights, 77, replica);
            for (tf, w_val) in obs.test_functions.iter().zip(&via_weights) {
                let direct = field.functional(|x| (tf.d1)(x));
                assert_abs_diff_eq!(
                    direct,
                    *w_val,
                    epsilon = 1e-9 * (1.0 + w_val.abs())
                );
            }
        }
    }

    #[test]
    fn total_mass_functional_has_variance_one_plus_t() {
        // For b = 0, sigma = 1, lambda = N(0, 1), the functional
        // int G(t, x) dx has variance exactly 1 + t: the bridge term
        // contributes Var(X) = 1 and the noise term contributes t.
        let t = 0.5;
        let grid = flat_grid(t, 0.1);
        let b = Coefficient::Constant([0.0]);
        let s = Coefficient::Constant([1.0]);
        let ctx = FluctuationContext::new(&grid, &b, &s, t).unwrap();
        let terminal = vec![1.0; ctx.xs.len()];
        let w = ctx.functional_weights(&terminal).unwrap();
        let weights = [w];
        let reps = 4000u64;
        let vals: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| ctx.sample_functionals(&weights, 99, rep)[0])
            .collect();
        let var = crate::stats::sample_variance(&vals);
        let mean = crate::stats::mean(&vals);
        // MC noise: std of the variance estimate is about
        // var * sqrt(2/reps) = 1.5 * 0.022; allow 4 sigma plus bias room.
        assert_abs_diff_eq!(var, 1.0 + t, epsilon = 0.16);
        assert_abs_diff_eq!(mean, 0.0, epsilon = 0.08);
        // The closed-form covariance must agree with the same identity up
        // to discretization error alone, and with the MC estimate at a few
        // of its standard errors.
        let exact = ctx.functional_covariance(&weights)[0][0];
        assert_abs_diff_eq!(exact, 1.0 + t, epsilon = 5e-3);
        assert_abs_diff_eq!(exact, var, epsilon = 0.16);
    }

    #[test]
    fn bridge_sampler_matches_bridge_moments() {
        let grid = flat_grid(0.1, 0.1);
        let b = Coefficient::Constant([0.0]);
        let s = Coefficient::Constant([1.0]);
        let ctx = FluctuationContext::new(&grid, &b, &s, 0.1).unwrap();
        // Nodes closest to levels 0.3 and 0.7 of the initial Gaussian CDF.
        let pick = |target: f64| -> usize {
            ctx.levels
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (**a - target).abs().total_cmp(&(**b - target).abs())
                })
                .map(|(i, _)| i)
                .unwrap()
        };
        let (i3, i7) = (pick(0.3), pick(0.7));
        let (u3, u7) = (ctx.levels[i3], ctx.levels[i7]);
        let reps = 20000;
        let mut v3 = Vec::with_capacity(reps);
        let mut v7 = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut rng = stream(7, purpose::BRIDGE, rep as u64, 0);
            let beta = ctx.sample_bridge(&mut rng);
            v3.push(beta[i3]);
            v7.push(beta[i7]);
        }
        let var3 = crate::stats::sample_variance(&v3);
        let var7 = crate::stats::sample_variance(&v7);
        let mean_cov = {
            let m3 = crate::stats::mean(&v3);
            let m7 = crate::stats::mean(&v7);
            v3.iter()
                .zip(&v7)
                .map(|(a, b)| (a - m3) * (b - m7))
                .sum::<f64>()
                / (reps as f64 - 1.0)
        };
        assert_abs_diff_eq!(var3, u3 * (1.0 - u3), epsilon = 0.01);
        assert_abs_diff_eq!(var7, u7 * (1.0 - u7), epsilon = 0.01);
        assert_abs_diff_eq!(mean_cov, u3 * (1.0 - u7), epsilon = 0.01);
    }

    #[test]
    fn clt_experiment_smoke_run_is_consistent() {
        let cfg = CltConfig {
            model: ModelSpec {
                n: 200,
                t_horizon: 0.25,
                dt: 0.0125,
                seed: 11,
                b: Coefficient::Constant([0.0]),
                sigma: Coefficient::Constant([1.0]),
                lambda: InitialLaw::Gaussian([0.0, 1.0]),
            },
            kind: ObservableKind::Entropy,
            replicas: 400,
            grid: GridConfig {
                dx: 0.1,
                ..GridConfig::default()
            },
        };
        let report = clt_experiment(&cfg).unwrap();
        assert_eq!(report.dropped, 0);
        assert!(report.predicted_variance > 0.0);
        assert!(
            (report.empirical_variance / report.predicted_variance - 1.0).abs() < 0.5,
            "variance ratio off: empirical {} vs predicted {}",
            report.empirical_variance,
            report.predicted_variance
        );
        assert!(report.ks < 0.2, "ks = {}", report.ks);
        // H*(t) = -(1 + t)/2 for the flat flow.
        assert_abs_diff_eq!(report.limit_value, -0.625, epsilon = 5e-3);
    }
}
