//! Hydrodynamic limit of the particle system.
//!
//! The empirical CDF converges to the solution R(t, x) of the conservative
//! equation R_t = -B(R)_x + S(R)_xx, where B is the antiderivative of the
//! drift b and S the antiderivative of sigma^2 / 2. The solver is an
//! explicit finite-volume scheme: first-order upwind in the hyperbolic flux
//! (direction chosen by the sign of b at each interface) and centered in the
//! diffusive flux, which keeps R monotone in x and confined to [0, 1] under
//! the CFL restriction.

use crate::error::{Error, Result};
use crate::model::{Coefficient, InitialLaw};
use crate::stats::normal_cdf;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Tuning knobs for the PDE solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Spatial resolution.
    pub dx: f64,
    /// Extra spatial margin beyond the automatic truncation rule.
    pub extra_margin: f64,
    /// CFL safety factor in (0, 1].
    pub cfl_safety: f64,
    /// Keep every k-th time slice (plus the final one). `None` targets
    /// roughly 256 stored rows; fluctuation work requires `Some(1)`.
    pub store_every: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dx: 0.01,
            extra_margin: 0.0,
            cfl_safety: 0.9,
            store_every: None,
        }
    }
}

/// Midpoint view of one time slice of the limit law: the measure with mass
/// R(x_{i+1}) - R(x_i) placed at the cell midpoint, along with the rank
/// R at the midpoint for evaluating rank-dependent coefficients.
#[derive(Debug, Clone)]
pub struct RowMeasure {
    /// Cell midpoints.
    pub points: Vec<f64>,
    /// Cell masses, clamped to be nonnegative.
    pub mass: Vec<f64>,
    /// Rank (CDF level) at each midpoint.
    pub rank: Vec<f64>,
    /// Total mass, close to 1 when the domain captures the support.
    pub total: f64,
}

impl RowMeasure {
    /// Normalized moment of g(x).
    pub fn moment(&self, g: impl Fn(f64) -> f64) -> f64 {
        let s: f64 = self
            .points
            .iter()
            .zip(&self.mass)
            .map(|(x, m)| g(*x) * m)
            .sum();
        s / self.total
    }

    /// Normalized moment of g(x, rank) against the plain measure.
    pub fn moment_xr(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        let s: f64 = self
            .points
            .iter()
            .zip(&self.mass)
            .zip(&self.rank)
            .map(|((x, m), r)| g(*x, *r) * m)
            .sum();
        s / self.total
    }

    /// Moment of g(x, rank) against the exponentially tilted measure with
    /// density proportional to e^{p x}.
    pub fn tilted_moment_xr(&self, p: f64, g: impl Fn(f64, f64) -> f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((x, m), r) in self.points.iter().zip(&self.mass).zip(&self.rank) {
            let w = m * (p * x).exp();
            num += g(*x, *r) * w;
            den += w;
        }
        num / den
    }
}

/// Numerical solution R(t, x) of the limit equation on a uniform space grid
/// with a subsampled record of time slices.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    /// Grid nodes, uniformly spaced.
    pub xs: Vec<f64>,
    /// Times of the stored slices (always includes 0 and the horizon).
    pub times: Vec<f64>,
    /// Stored slices of R, indexed [row][node].
    pub r: Vec<Vec<f64>>,
    /// Stored slices of the space derivative R_x (centered differences,
    /// clamped nonnegative), indexed like `r`.
    pub rx: Vec<Vec<f64>>,
    /// Node spacing.
    pub dx: f64,
    /// Solver time step (stored rows are `store_every` steps apart).
    pub dt: f64,
    /// Solver steps between consecutive stored rows.
    pub store_every: usize,
}

impl DensityGrid {
    /// Index of the stored row at time t (within solver-step slack).
    pub fn row_at_time(&self, t: f64) -> Result<usize> {
        // Snap to the nearest stored row, then require it to lie within
        // half a storage stride of the requested time.
        let idx = self.times.partition_point(|s| *s < t);
        let mut best = idx.min(self.times.len() - 1);
        if idx > 0 && (self.times[idx - 1] - t).abs() < (self.times[best] - t).abs() {
            best = idx - 1;
        }
        if (self.times[best] - t).abs() <= 0.5 * self.dt * self.store_every as f64 + 1e-12 {
            return Ok(best);
        }
        Err(Error::Unavailable(format!(
            "no stored time slice near t = {t} (nearest {}, horizon {})",
            self.times[best],
            self.times.last().copied().unwrap_or(0.0)
        )))
    }

    /// Bilinear interpolation of R, using the saturated values 0 and 1
    /// outside the spatial domain and clamping t to the stored range.
    pub fn r_at(&self, t: f64, x: f64) -> f64 {
        let t = t.clamp(self.times[0], *self.times.last().unwrap());
        let row_hi = self.times.partition_point(|s| *s < t).max(1).min(self.times.len() - 1);
        let row_lo = row_hi - 1;
        let (t0, t1) = (self.times[row_lo], self.times[row_hi]);
        let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        let at = |row: usize| -> f64 {
            let r = &self.r[row];
            if x <= self.xs[0] {
                return if x < self.xs[0] { 0.0 } else { r[0] };
            }
            if x >= *self.xs.last().unwrap() {
                return if x > *self.xs.last().unwrap() { 1.0 } else { *r.last().unwrap() };
            }
            let j = ((x - self.xs[0]) / self.dx).floor() as usize;
            let j = j.min(self.xs.len() - 2);
            let frac = (x - self.xs[j]) / self.dx;
            r[j] + (r[j + 1] - r[j]) * frac
        };
        (1.0 - w) * at(row_lo) + w * at(row_hi)
    }

    /// Midpoint measure view of one stored row.
    pub fn row_measure(&self, row: usize) -> RowMeasure {
        let r = &self.r[row];
        let n = self.xs.len() - 1;
        let mut points = Vec::with_capacity(n);
        let mut mass = Vec::with_capacity(n);
        let mut rank = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            points.push(0.5 * (self.xs[i] + self.xs[i + 1]));
            let m = (r[i + 1] - r[i]).max(0.0);
            mass.push(m);
            rank.push(0.5 * (r[i] + r[i + 1]));
            total += m;
        }
        RowMeasure {
            points,
            mass,
            rank,
            total,
        }
    }

    /// Writes the stored slices as CSV rows `t,x,R,Rx`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,x,R,Rx")?;
        for (row, t) in self.times.iter().enumerate() {
            for (j, x) in self.xs.iter().enumerate() {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e},{:.16e}",
                    t, x, self.r[row][j], self.rx[row][j]
                )?;
            }
        }
        Ok(())
    }
}

/// Solves the limit equation up to `t_horizon` from the CDF of `lambda`.
///
/// The spatial domain is sized so the solution's support stays inside it:
/// center(lambda) +- (6 spread + max|b| T + 6 max|sigma| sqrt(T) + margin).
/// Edge values are held fixed (Dirichlet) at the initial CDF values, which
/// the sizing rule keeps within 1e-6 of 0 and 1.
pub fn solve_porous_medium(
    b: &Coefficient,
    sigma: &Coefficient,
    lambda: &InitialLaw,
    t_horizon: f64,
    cfg: &GridConfig,
) -> Result<DensityGrid> {
    b.validate()?;
    sigma.validate()?;
    lambda.validate()?;
    if !(t_horizon > 0.0 && t_horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive and finite, got {t_horizon}"
        )));
    }
    if !(cfg.dx > 0.0 && cfg.dx.is_finite()) {
        return Err(Error::InvalidParameter(format!("dx must be positive, got {}", cfg.dx)));
    }
    if !(cfg.cfl_safety > 0.0 && cfg.cfl_safety <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cfl_safety must lie in (0, 1], got {}",
            cfg.cfl_safety
        )));
    }

    // Spatial domain.
    let center = lambda.center();
    let spread = lambda.spread();
    let b_max = b.max_abs_on_unit();
    let s_max = sigma.max_abs_on_unit();
    let half = 6.0 * spread + b_max * t_horizon + 6.0 * s_max * t_horizon.sqrt() + cfg.extra_margin;
    let left = center - half;
    let nx = ((2.0 * half) / cfg.dx).ceil() as usize;
    if nx < 8 {
        return Err(Error::InvalidParameter(
            "spatial grid would have fewer than 8 cells; decrease dx".into(),
        ));
    }
    let xs: Vec<f64> = (0..=nx).map(|i| left + i as f64 * cfg.dx).collect();

    let mut r: Vec<f64> = xs.iter().map(|x| lambda.cdf(*x)).collect();
    if r[0] > 1e-6 || r[nx] < 1.0 - 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "domain does not capture the initial law: edge CDF values {} and {}",
            r[0], r[nx]
        )));
    }

    // CFL limit for the combined explicit scheme: the advective and
    // diffusive stability fractions must sum to at most 1, which is tighter
    // than the minimum of the two separate limits.
    let diff_max = 0.5 * s_max * s_max;
    let adv_rate = b_max / cfg.dx;
    let diff_rate = 2.0 * diff_max / (cfg.dx * cfg.dx);
    let total_rate = adv_rate + diff_rate;
    if total_rate <= 0.0 {
        return Err(Error::InvalidParameter(
            "both coefficients vanish; nothing to solve".into(),
        ));
    }
    let dt_raw = cfg.cfl_safety / total_rate;
    let steps = (t_horizon / dt_raw).ceil() as usize;
    let dt = t_horizon / steps as f64;

    let store_every = match cfg.store_every {
        Some(k) if k >= 1 => k,
        Some(_) => {
            return Err(Error::InvalidParameter("store_every must be >= 1".into()));
        }
        None => steps.div_ceil(256).max(1),
    };

    let mut grid = DensityGrid {
        xs,
        times: Vec::new(),
        r: Vec::new(),
        rx: Vec::new(),
        dx: cfg.dx,
        dt,
        store_every,
    };
    let store =
        |grid: &mut DensityGrid, k: usize, row: &[f64]| {
            grid.times.push(k as f64 * dt);
            grid.r.push(row.to_vec());
            grid.rx.push(derivative_row(row, cfg.dx));
        };
    store(&mut grid, 0, &r);

    let mut next = r.clone();
    let mut flux = vec![0.0; nx]; // flux[i] lives at the interface i+1/2
    let inv_dx = 1.0 / cfg.dx;
    let inv_dx2 = inv_dx * inv_dx;
    for k in 1..=steps {
        for i in 0..nx {
            let mid = 0.5 * (r[i] + r[i + 1]);
            flux[i] = if b.eval(mid) >= 0.0 {
                b.antiderivative(r[i])
            } else {
                b.antiderivative(r[i + 1])
            };
        }
        let mut s_prev = sigma.squared_half_antiderivative(r[0]);
        let mut s_here = sigma.squared_half_antiderivative(r[1]);
        for i in 1..nx {
            let s_next = sigma.squared_half_antiderivative(r[i + 1]);
            next[i] = r[i] - dt * inv_dx * (flux[i] - flux[i - 1])
                + dt * inv_dx2 * (s_next - 2.0 * s_here + s_prev);
            s_prev = s_here;
            s_here = s_next;
        }
        std::mem::swap(&mut r, &mut next);
        if k % store_every == 0 || k == steps {
            if !r.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "PDE solution became non-finite at step {k}"
                )));
            }
            store(&mut grid, k, &r);
        }
    }

    // Structural invariants of the scheme; failure means the CFL or domain
    // logic is broken, so fail loudly rather than return a bad grid.
    for (row, vals) in grid.r.iter().enumerate() {
        for w in vals.windows(2) {
            if w[1] < w[0] - 1e-8 {
                return Err(Error::Numerical(format!(
                    "monotonicity violated in stored row {row}"
                )));
            }
        }
        if vals.iter().any(|v| *v < -1e-12 || *v > 1.0 + 1e-12) {
            return Err(Error::Numerical(format!(
                "solution left [0, 1] in stored row {row}"
            )));
        }
    }
    Ok(grid)
}

fn derivative_row(r: &[f64], dx: f64) -> Vec<f64> {
    let n = r.len();
    let mut out = vec![0.0; n];
    out[0] = ((r[1] - r[0]) / dx).max(0.0);
    out[n - 1] = ((r[n - 1] - r[n - 2]) / dx).max(0.0);
    for i in 1..n - 1 {
        out[i] = ((r[i + 1] - r[i - 1]) / (2.0 * dx)).max(0.0);
    }
    out
}

/// Closed-form reference for affine drift b(r) = c2 + 2 c1 r and constant
/// volatility sigma0, by the Cole-Hopf substitution.
///
/// With gamma = 2 c1 / sigma0^2, the potential
/// phi(0, y) = exp(-gamma * int_0^y F_lambda) evolves by the linear
/// advection-diffusion equation phi_t = -c2 phi_x + (sigma0^2/2) phi_xx,
/// solved here exactly as a Gaussian convolution with analytic tail
/// closures; then R = -(1/gamma) (log phi)_x.
pub fn cole_hopf_solution(
    c1: f64,
    c2: f64,
    sigma0: f64,
    lambda: &InitialLaw,
    xs: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    lambda.validate()?;
    if c1 == 0.0 {
        return Err(Error::InvalidParameter(
            "cole-hopf needs c1 != 0; use the plain Gaussian convolution for constant drift"
                .into(),
        ));
    }
    if !(sigma0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cole-hopf needs sigma0 > 0, got {sigma0}"
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidParameter(
            "cole-hopf needs at least three evaluation points".into(),
        ));
    }
    let dy = xs[1] - xs[0];
    if xs.windows(2).any(|w| (w[1] - w[0] - dy).abs() > 1e-9 * dy) {
        return Err(Error::InvalidParameter(
            "cole-hopf needs uniformly spaced evaluation points".into(),
        ));
    }
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(xs.iter().map(|x| lambda.cdf(*x)).collect());
    }

    let gamma = 2.0 * c1 / (sigma0 * sigma0);
    let log_phi0: Vec<f64> = xs.iter().map(|y| -gamma * lambda.integrated_cdf(*y)).collect();
    let phi0: Vec<f64> = log_phi0.iter().map(|l| l.exp()).collect();
    let v = sigma0 * sigma0 * t;
    let sd = v.sqrt();
    let y_min = xs[0];
    let y_max = *xs.last().unwrap();
    // Right tail: phi0(y) ~ a_right * exp(-gamma y) once F_lambda has
    // saturated at 1, because d/dy log phi0 = -gamma F_lambda(y).
    let log_a_right = log_phi0.last().unwrap() + gamma * y_max;

    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sd);
    let mut log_phi = Vec::with_capacity(xs.len());
    for &x in xs {
        let m = x - c2 * t;
        let mut interior = 0.0;
        for (j, y) in xs.iter().enumerate() {
            let z = (y - m) / sd;
            let w = if j == 0 || j == xs.len() - 1 { 0.5 } else { 1.0 };
            interior += w * phi0[j] * (-0.5 * z * z).exp();
        }
        interior *= norm * dy;
        let left = phi0[0] * normal_cdf((y_min - m) / sd);
        let right = (log_a_right - gamma * m + 0.5 * gamma * gamma * v).exp()
            * normal_cdf(-((y_max - (m - gamma * v)) / sd));
        let phi = interior + left + right;
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Numerical(format!(
                "cole-hopf potential degenerate at x = {x}: phi = {phi}"
            )));
        }
        log_phi.push(phi.ln());
    }

    let scale = -1.0 / gamma;
    let n = xs.len();
    let mut out = vec![0.0; n];
    out[0] = scale * (log_phi[1] - log_phi[0]) / dy;
    out[n - 1] = scale * (log_phi[n - 1] - log_phi[n - 2]) / dy;
    for i in 1..n - 1 {
        out[i] = scale * (log_phi[i + 1] - log_phi[i - 1]) / (2.0 * dy);
    }
    Ok(out)
}

/// Discrete rank antiderivative: (I_n g)(r) = (1/n) sum_{i<=n} g(i/n) for
/// the ranks i/n that do not exceed r.
pub fn discrete_antiderivative(g: impl Fn(f64) -> f64, n: usize, r: f64) -> f64 {
    assert!(n > 0, "discrete antiderivative needs n >= 1");
    let nf = n as f64;
    let mut acc = 0.0;
    for i in 1..=n {
        let u = i as f64 / nf;
        if r >= u {
            acc += g(u);
        }
    }
    acc / nf
}
