//! Euler-Maruyama simulation of the rank-based particle system and its
//! mean-field coupling.
//!
//! Each step sorts the particles, assigns every particle the rank
//! count(X_j <= X_i) / n (ties share the full count), and advances with
//! drift b(rank) and volatility sigma(rank). The coupled mean-field system
//! reuses the same initial draws and Brownian increments but reads its rank
//! from a precomputed limit grid R(t, x), so the pathwise gap between the
//! two systems isolates the finite-n coupling error.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pde::DensityGrid;
use crate::rng::{purpose, stream};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;

/// Recorded trajectories of one simulation replica.
#[derive(Debug, Clone)]
pub struct ParticlePath {
    /// Recorded times, every Euler step from 0 to the horizon.
    pub times: Vec<f64>,
    /// positions[k][i] = X_i(times[k]).
    pub positions: Vec<Vec<f64>>,
    /// Mean-field companion paths driven by the same noise, if requested.
    pub mean_field: Option<Vec<Vec<f64>>>,
}

impl ParticlePath {
    /// Empirical CDF of the recorded slice k at level x.
    pub fn cdf_at(&self, step: usize, x: f64) -> f64 {
        let row = &self.positions[step];
        let count = row.iter().filter(|v| **v <= x).count();
        count as f64 / row.len() as f64
    }

    /// Final particle positions.
    pub fn final_positions(&self) -> &[f64] {
        self.positions.last().expect("path has at least the initial slice")
    }

    /// Largest displacement from the initial position over all particles
    /// and recorded times.
    pub fn max_displacement(&self) -> f64 {
        let init = &self.positions[0];
        let mut sup: f64 = 0.0;
        for row in &self.positions {
            for (x, x0) in row.iter().zip(init) {
                sup = sup.max((x - x0).abs());
            }
        }
        sup
    }

    /// Writes rows `time,particle,x[,x_meanfield]`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        if self.mean_field.is_some() {
            writeln!(out, "time,particle,x,x_meanfield")?;
        } else {
            writeln!(out, "time,particle,x")?;
        }
        for (k, t) in self.times.iter().enumerate() {
            for (i, x) in self.positions[k].iter().enumerate() {
                match &self.mean_field {
                    Some(mf) => writeln!(out, "{t:.16e},{i},{x:.16e},{:.16e}", mf[k][i])?,
                    None => writeln!(out, "{t:.16e},{i},{x:.16e}")?,
                }
            }
        }
        Ok(())
    }
}

/// Assigns each particle its tie-aware rank count: count(X_j <= X_i).
/// `idx` and `counts` are caller-provided buffers of length n.
pub(crate) fn rank_counts(x: &[f64], idx: &mut [usize], counts: &mut [usize]) {
    let n = x.len();
    idx.iter_mut().enumerate().for_each(|(i, v)| *v = i);
    idx.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && x[idx[j + 1]] == x[idx[k]] {
            j += 1;
        }
        for m in k..=j {
            counts[idx[m]] = j + 1;
        }
        k = j + 1;
    }
}

/// Core Euler loop. Calls `observe(step, t, ranked, mean_field)` at step 0
/// (initial positions) and after every step. With `grid` present, the
/// mean-field companion is advanced with the same Gaussian increments.
pub fn simulate_with<F>(
    spec: &ModelSpec,
    grid: Option<&DensityGrid>,
    replica: u64,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &[f64], Option<&[f64]>),
{
    spec.validate()?;
    let steps = spec.num_steps()?;
    let n = spec.n;
    let dt = spec.dt;
    let sqdt = dt.sqrt();

    // Ranks only ever take the values k/n, so tabulate both coefficients on
    // that lattice once. Index k-1 holds the value for rank count k.
    let nf = n as f64;
    let b_tab: Vec<f64> = (1..=n).map(|k| spec.b.eval(k as f64 / nf)).collect();
    let s_tab: Vec<f64> = (1..=n).map(|k| spec.sigma.eval(k as f64 / nf)).collect();

    let mut rngs: Vec<_> = (0..n)
        .map(|i| stream(spec.seed, purpose::PARTICLE, replica, i as u64))
        .collect();
    let mut x: Vec<f64> = rngs.iter_mut().map(|r| spec.lambda.sample(r)).collect();
    let mut xb = grid.map(|_| x.clone());

    let mut idx = vec![0usize; n];
    let mut counts = vec![0usize; n];

    observe(0, 0.0, &x, xb.as_deref());
    for k in 0..steps {
        let t = k as f64 * dt;
        rank_counts(&x, &mut idx, &mut counts);
        for i in 0..n {
            let z: f64 = rngs[i].sample(StandardNormal);
            let c = counts[i] - 1;
            x[i] += b_tab[c] * dt + s_tab[c] * sqdt * z;
            if let (Some(xb), Some(grid)) = (xb.as_mut(), grid) {
                let r = grid.r_at(t, xb[i]).clamp(0.0, 1.0);
                xb[i] += spec.b.eval(r) * dt + spec.sigma.eval(r) * sqdt * z;
            }
        }
        if !x.iter().all(|v| v.is_finite())
            || xb.as_ref().is_some_and(|v| !v.iter().all(|u| u.is_finite()))
        {
            return Err(Error::Numerical(format!(
                "simulation produced a non-finite position at step {}",
                k + 1
            )));
        }
        observe(k + 1, (k + 1) as f64 * dt, &x, xb.as_deref());
    }
    Ok(())
}

/// Simulates one replica of the ranked system, recording every step.
pub fn simulate_rank_based(spec: &ModelSpec, replica: u64) -> Result<ParticlePath> {
    let mut path = ParticlePath {
        times: Vec::new(),
        positions: Vec::new(),
        mean_field: None,
    };
    simulate_with(spec, None, replica, |_, t, x, _| {
        path.times.push(t);
        path.positions.push(x.to_vec());
    })?;
    Ok(path)
}

/// Simulates one replica together with its mean-field coupling on `grid`.
pub fn simulate_coupled(
    spec: &ModelSpec,
    grid: &DensityGrid,
    replica: u64,
) -> Result<ParticlePath> {
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut mean_field = Vec::new();
    simulate_with(spec, Some(grid), replica, |_, t, x, xb| {
        times.push(t);
        positions.push(x.to_vec());
        mean_field.push(xb.expect("coupled run always carries the companion").to_vec());
    })?;
    Ok(ParticlePath {
        times,
        positions,
        mean_field: Some(mean_field),
    })
}

/// Only the final positions of one replica, without recording the path.
pub fn simulate_final(spec: &ModelSpec, replica: u64) -> Result<Vec<f64>> {
    let mut last: Vec<f64> = Vec::new();
    simulate_with(spec, None, replica, |_, _, x, _| {
        last.clear();
        last.extend_from_slice(x);
    })?;
    Ok(last)
}

/// Coupling error max_t (1/n) sum_i |X_i(t) - Xbar_i(t)|^p over the
/// recorded times of a coupled path.
pub fn coupling_error(path: &ParticlePath, p: f64) -> Result<f64> {
    let mf = path.mean_field.as_ref().ok_or_else(|| {
        Error::InvalidParameter("coupling error needs a path with a mean-field companion".into())
    })?;
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("p must be positive, got {p}")));
    }
    let n = path.positions[0].len() as f64;
    let mut worst: f64 = 0.0;
    for (row, row_mf) in path.positions.iter().zip(mf) {
        let s: f64 = row
            .iter()
            .zip(row_mf)
            .map(|(a, b)| (a - b).abs().powf(p))
            .sum();
        worst = worst.max(s / n);
    }
    Ok(worst)
}

/// Monte Carlo bound on P(max displacement >= m) from one-dimensional
/// comparison processes: every particle's displacement is stochastically
/// dominated pathwise by drift max(b) (above) and min(b) (below) with the
/// largest volatility, so
/// 2 P(sup Y_up >= m) + 2 P(sup (-Y_down) >= m) caps the per-particle
/// probability. The estimate runs on the same Euler grid as the system.
pub fn envelope_tail_bound(spec: &ModelSpec, m: f64, replicas: usize) -> Result<f64> {
    spec.validate()?;
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("m must be positive, got {m}")));
    }
    if replicas == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    let steps = spec.num_steps()?;
    let dt = spec.dt;
    let sqdt = dt.sqrt();
    let (b_min, b_max) = spec.b.range_on_unit();
    let s_max = spec.sigma.max_abs_on_unit();
    let mut hits_up = 0usize;
    let mut hits_down = 0usize;
    for rep in 0..replicas {
        let mut rng = stream(spec.seed, purpose::ENVELOPE, rep as u64, 0);
        let mut y_up = 0.0f64;
        let mut y_down = 0.0f64;
        let mut sup_up = 0.0f64;
        let mut sup_down = 0.0f64;
        for _ in 0..steps {
            let z: f64 = rng.sample(StandardNormal);
            y_up += b_max * dt + s_max * sqdt * z;
            y_down += b_min * dt + s_max * sqdt * z;
            sup_up = sup_up.max(y_up);
            sup_down = sup_down.max(-y_down);
        }
        if sup_up >= m {
            hits_up += 1;
        }
        if sup_down >= m {
            hits_down += 1;
        }
    }
    let r = replicas as f64;
    Ok((2.0 * hits_up as f64 / r + 2.0 * hits_down as f64 / r).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficient, InitialLaw};
    use crate::pde::{solve_porous_medium, GridConfig};
    use approx::assert_abs_diff_eq;

    fn base_spec() -> ModelSpec {
        ModelSpec {
            n: 64,
            t_horizon: 0.25,
            dt: 0.0125,
            seed: 2024,
            b: Coefficient::Affine([0.5, -1.0]),
            sigma: Coefficient::Constant([1.0]),
            lambda: InitialLaw::Gaussian([0.0, 1.0]),
        }
    }

    #[test]
    fn rank_counts_share_ties() {
        let x = [2.0, 1.0, 2.0, -3.0];
        let mut idx = vec![0; 4];
        let mut counts = vec![0; 4];
        rank_counts(&x, &mut idx, &mut counts);
        assert_eq!(counts, vec![4, 2, 4, 1]);
    }

    #[test]
    fn same_replica_reproduces_bitwise() {
        let spec = base_spec();
        let a = simulate_rank_based(&spec, 3).unwrap();
        let b = simulate_rank_based(&spec, 3).unwrap();
        assert_eq!(a.positions, b.positions);
        let c = simulate_rank_based(&spec, 4).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn final_positions_shortcut_matches_full_path() {
        let spec = base_spec();
        let full = simulate_rank_based(&spec, 1).unwrap();
        let fast = simulate_final(&spec, 1).unwrap();
        assert_eq!(full.final_positions(), fast.as_slice());
    }

    #[test]
    fn mean_position_drifts_at_the_rank_averaged_rate() {
        let mut spec = base_spec();
        spec.n = 4000;
        let path = simulate_rank_based(&spec, 0).unwrap();
        let nf = spec.n as f64;
        let mean_drift: f64 =
            (1..=spec.n).map(|k| spec.b.eval(k as f64 / nf)).sum::<f64>() / nf;
        let m0 = crate::stats::mean(&path.positions[0]);
        let m1 = crate::stats::mean(path.final_positions());
        // The sample mean moves at exactly the rank-averaged drift in
        // expectation; MC noise here is about sigma sqrt(T/n) ~ 0.008.
        assert_abs_diff_eq!(m1 - m0, mean_drift * spec.t_horizon, epsilon = 0.04);
    }

    #[test]
    fn constant_coefficients_make_the_coupling_exact() {
        // With constant b and sigma the ranked system and the mean-field
        // companion receive identical updates, so the coupling error is 0.
        let spec = ModelSpec {
            b: Coefficient::Constant([0.3]),
            sigma: Coefficient::Constant([0.8]),
            ..base_spec()
        };
        let grid = solve_porous_medium(
            &spec.b,
            &spec.sigma,
            &spec.lambda,
            spec.t_horizon,
            &GridConfig {
                dx: 0.05,
                ..GridConfig::default()
            },
        )
        .unwrap();
        let path = simulate_coupled(&spec, &grid, 0).unwrap();
        assert_eq!(coupling_error(&path, 2.0).unwrap(), 0.0);
        assert_eq!(
            path.positions.last().unwrap(),
            path.mean_field.as_ref().unwrap().last().unwrap()
        );
    }

    #[test]
    fn coupled_paths_stay_close_for_smooth_coefficients() {
        let mut spec = base_spec();
        spec.n = 512;
        let grid = solve_porous_medium(
            &spec.b,
            &spec.sigma,
            &spec.lambda,
            spec.t_horizon,
            &GridConfig {
                dx: 0.02,
                ..GridConfig::default()
            },
        )
        .unwrap();
        let path = simulate_coupled(&spec, &grid, 0).unwrap();
        let err = coupling_error(&path, 2.0).unwrap();
        assert!(err > 0.0, "affine drift cannot couple exactly");
        assert!(err < 0.05, "squared coupling error unexpectedly large: {err}");
    }

    #[test]
    fn empirical_cdf_starts_near_the_initial_law() {
        let mut spec = base_spec();
        spec.n = 2000;
        let path = simulate_rank_based(&spec, 5).unwrap();
        for x in [-1.0, 0.0, 1.0] {
            let f = path.cdf_at(0, x);
            let target = spec.lambda.cdf(x);
            assert_abs_diff_eq!(f, target, epsilon = 0.05);
        }
    }

    #[test]
    fn envelope_bound_caps_observed_displacements() {
        let spec = base_spec();
        let m = 2.5;
        let bound = envelope_tail_bound(&spec, m, 2000).unwrap();
        // Empirical frequency of a large displacement across replicas.
        let mut hits = 0usize;
        let reps = 200usize;
        for rep in 0..reps {
            let path = simulate_rank_based(&spec, rep as u64).unwrap();
            if path.max_displacement() >= m {
                hits += 1;
            }
        }
        let observed = hits as f64 / reps as f64;
        let (_, wilson_hi) = crate::stats::wilson_interval(hits, reps, 1.959963984540054);
        assert!(
            observed <= bound + (wilson_hi - observed),
            "observed {observed} exceeds envelope bound {bound} beyond MC slack"
        );
    }

    #[test]
    fn csv_dump_contains_header_and_rows() {
        let spec = ModelSpec {
            n: 3,
            t_horizon: 0.02,
            dt: 0.01,
            ..base_spec()
        };
        let path = simulate_rank_based(&spec, 0).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,particle,x"));
        assert_eq!(text.lines().count(), 1 + 3 * 3);
    }
}
