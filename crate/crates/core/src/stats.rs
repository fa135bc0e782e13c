//! Distribution distances, tail functions, and small statistical helpers.
//!
//! Wasserstein distances are computed exactly from CDF differences (no
//! binning): between two empirical measures by a merge sweep over the pooled
//! atoms, and between an empirical measure and a piecewise-linear grid CDF by
//! closed-form integration on each subinterval, including sign crossings.

use crate::error::{Error, Result};
use statrs::function::erf::erfc;

/// A nonempty sample sorted ascending, the common input to the distances.
#[derive(Debug, Clone)]
pub struct SortedSample {
    values: Vec<f64>,
}

impl SortedSample {
    /// Sorts and validates the sample. Fails on empty or non-finite input.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty sample".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite sample value".into()));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Empirical CDF, counting points <= x (ties contribute their full mass).
    pub fn cdf(&self, x: f64) -> f64 {
        let count = self.values.partition_point(|v| *v <= x);
        count as f64 / self.values.len() as f64
    }
}

/// Exact 1-Wasserstein distance between two empirical measures:
/// the integral of |F_a - F_b| over the pooled support.
///
/// For equal sample sizes this equals the mean absolute difference of the
/// sorted samples; unequal sizes are handled by the same sweep.
pub fn wasserstein1(a: &SortedSample, b: &SortedSample) -> f64 {
    let (va, vb) = (a.values(), b.values());
    let (na, nb) = (va.len() as f64, vb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    while i < va.len() || j < vb.len() {
        let x = match (va.get(i), vb.get(j)) {
            (Some(&xa), Some(&xb)) => xa.min(xb),
            (Some(&xa), None) => xa,
            (None, Some(&xb)) => xb,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            let fa = i as f64 / na;
            let fb = j as f64 / nb;
            total += (fa - fb).abs() * (x - p);
        }
        while i < va.len() && va[i] == x {
            i += 1;
        }
        while j < vb.len() && vb[j] == x {
            j += 1;
        }
        prev = Some(x);
    }
    total
}

/// p-Wasserstein distance between equal-size empirical measures:
/// the l^p mean of sorted coordinate differences. Requires p >= 1.
pub fn wasserstein_p(a: &SortedSample, b: &SortedSample, p: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "wasserstein_p needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "wasserstein_p needs p >= 1, got {p}"
        )));
    }
    let n = a.len() as f64;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum();
    Ok((sum / n).powf(1.0 / p))
}

/// Exact 1-Wasserstein distance between an empirical measure and the
/// piecewise-linear CDF through `(grid_xs, grid_r)`.
///
/// The grid CDF is extended by 0 left of the grid and 1 right of it, which
/// matches grids whose edge values have saturated. Every subinterval between
/// consecutive breakpoints (pooled sample points and grid nodes) contributes
/// the exact integral of |step - linear|, splitting at sign crossings.
pub fn wasserstein1_vs_grid(sample: &SortedSample, grid_xs: &[f64], grid_r: &[f64]) -> Result<f64> {
    if grid_xs.len() != grid_r.len() || grid_xs.len() < 2 {
        return Err(Error::InvalidParameter(
            "grid CDF needs matching xs/r arrays with at least two nodes".into(),
        ));
    }
    let grid_cdf = |x: f64| -> f64 {
        if x <= grid_xs[0] {
            return if x < grid_xs[0] { 0.0 } else { grid_r[0] };
        }
        if x >= grid_xs[grid_xs.len() - 1] {
            return if x > grid_xs[grid_xs.len() - 1] {
                1.0
            } else {
                grid_r[grid_r.len() - 1]
            };
        }
        let hi = grid_xs.partition_point(|g| *g <= x);
        let (x0, x1) = (grid_xs[hi - 1], grid_xs[hi]);
        let (r0, r1) = (grid_r[hi - 1], grid_r[hi]);
        r0 + (r1 - r0) * (x - x0) / (x1 - x0)
    };

    // Pooled, deduplicated breakpoints.
    let mut breaks: Vec<f64> = sample
        .values()
        .iter()
        .copied()
        .chain(grid_xs.iter().copied())
        .collect();
    breaks.sort_unstable_by(f64::total_cmp);
    breaks.dedup();

    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            continue;
        }
        // The empirical CDF is constant on (u, v]; evaluate just right of u.
        let step = sample.cdf(u);
        // d(x) = step - grid_cdf(x) is linear on [u, v] because no grid node
        // lies strictly inside the subinterval.
        let du = step - grid_cdf(u);
        let dv = step - grid_cdf(v);
        let len = v - u;
        total += if du * dv >= 0.0 {
            0.5 * (du.abs() + dv.abs()) * len
        } else {
            let xi = du / (du - dv) * len;
            0.5 * (du.abs() * xi + dv.abs() * (len - xi))
        };
    }
    // Tails: immediately left of the first breakpoint both CDFs agree at 0,
    // and right of the last both agree at 1 (grid saturation), so only
    // pooled-interior mass contributes. When the grid's edge values have not
    // fully saturated, the leftover mass beyond the grid is bounded by the
    // edge defects, which the caller controls through the domain margin.
    Ok(total)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail P(Z > x), accurate deep into the tail.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between a sample and a reference CDF,
/// taking for each atom both one-sided gaps around the jump.
pub fn ks_distance(sample: &SortedSample, cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sample.len() as f64;
    let mut sup: f64 = 0.0;
    for (idx, &x) in sample.values().iter().enumerate() {
        let f = cdf(x);
        let hi = (idx + 1) as f64 / n - f;
        let lo = f - idx as f64 / n;
        sup = sup.max(hi.abs()).max(lo.abs());
    }
    sup
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    assert!(trials > 0, "wilson_interval needs at least one trial");
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Ordinary least-squares slope of y against x.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter(
            "slope needs matching x/y arrays with at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "slope undefined: x values are all equal".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Arithmetic mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
