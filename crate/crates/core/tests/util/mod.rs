//! Closed-form oracles used by the acceptance suite. Everything here is
//! derived independently of the library's numerical machinery: plain
//! Gaussian moment identities evaluated with std math only.

/// For X ~ N(0, v): E e^{aX} = e^{a^2 v / 2}.
fn mgf(a: f64, v: f64) -> f64 {
    (0.5 * a * a * v).exp()
}

/// Limit value of the J-normalized entropy observable when the limit law
/// is N(0, v): ln<e^X> - <X e^X>/<e^X> = v/2 - v = -v/2.
pub fn gaussian_entropy_limit(v: f64) -> f64 {
    -0.5 * v
}

/// Limit value of the J-normalized l^p diversity observable under N(0, v):
/// <e^{pX}>^{1/p} / <e^X> = e^{p v / 2 - v / 2}.
pub fn gaussian_diversity_limit(p: f64, v: f64) -> f64 {
    (-(1.0 - p) * 0.5 * v).exp()
}

/// Limit value of the J-normalized geometric-mean observable under N(0, v):
/// e^{<X>} / <e^X> = e^{-v/2}.
pub fn gaussian_geometric_limit(v: f64) -> f64 {
    (-0.5 * v).exp()
}

/// Delta-method CLT variance of the entropy observable for n i.i.d.
/// particles with law N(0, v): grad J^T Cov(f) grad J over the test
/// functions f = (e^x, x e^x), using
///   E X e^{aX}   = a v e^{a^2 v / 2},
///   E X^2 e^{aX} = (v + a^2 v^2) e^{a^2 v / 2}.
pub fn iid_entropy_clt_variance(v: f64) -> f64 {
    let m0 = mgf(1.0, v); // E e^X
    let m1 = v * m0; // E X e^X
    let e2 = mgf(2.0, v); // E e^{2X}
    let var_f0 = e2 - m0 * m0;
    let cov_f0_f1 = 2.0 * v * e2 - m0 * m1;
    let var_f1 = (v + 4.0 * v * v) * e2 - m1 * m1;
    // J(m) = ln m0 - m1/m0.
    let g0 = 1.0 / m0 + m1 / (m0 * m0);
    let g1 = -1.0 / m0;
    g0 * g0 * var_f0 + 2.0 * g0 * g1 * cov_f0_f1 + g1 * g1 * var_f1
}

/// Closed-form CDF of the shifted/scaled Gaussian solution of the
/// constant-coefficient limit equation: starting law N(0, s0sq), drift b0,
/// volatility s0, time t gives R(t, x) = Phi((x - b0 t)/sqrt(s0sq + s0^2 t)).
/// Phi is passed in so the oracle stays free of any erf implementation
/// choice of its own.
pub fn constant_coefficient_cdf(
    x: f64,
    t: f64,
    b0: f64,
    s0: f64,
    s0sq_init: f64,
    phi: impl Fn(f64) -> f64,
) -> f64 {
    phi((x - b0 * t) / (s0sq_init + s0 * s0 * t).sqrt())
}
