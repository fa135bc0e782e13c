//! Test functions and market observables.
//!
//! An observable is an outer map J applied to empirical averages of scalar
//! test functions of the particle positions: Y = J(<f_1>, ..., <f_k>). The
//! three market observables (entropy, l^p diversity, geometric mean) are all
//! of this form after centering by their natural normalization, which makes
//! them ready-made inputs for the fluctuation CLT machinery.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type HessianMap = Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;
pub type DomainCheck = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A smooth scalar test function with derivatives up to third order and an
/// exponential growth rate c such that |f(x)| = O(poly(x) e^{c|x|}).
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: ScalarFn,
    pub d1: ScalarFn,
    pub d2: ScalarFn,
    pub d3: ScalarFn,
    pub growth: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// Maps the J-normalized observable value back to the market quantity.
///
/// The J form is the one obeying the CLT (for example H(mu) - log n for the
/// entropy); the market form is the raw H(mu), D_p(mu), or S(mu). Applying
/// the map to J(<f>(log mu)) for unnormalized positive mu also produces the
/// degree-0 homogeneous extension that portfolio generation requires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// market = j + log n.
    AddLogN,
    /// market = n^exponent * j.
    ScalePow { exponent: f64 },
    /// market = j / n.
    ScaleInvN,
    /// market = j.
    Identity,
}

impl Normalization {
    /// Market value from the J-normalized value.
    pub fn to_market(&self, j_value: f64, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            Normalization::AddLogN => j_value + nf.ln(),
            Normalization::ScalePow { exponent } => nf.powf(*exponent) * j_value,
            Normalization::ScaleInvN => j_value / nf,
            Normalization::Identity => j_value,
        }
    }

    /// Multiplier of the J value in `to_market` (1 for the additive case).
    pub fn market_scale(&self, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            Normalization::AddLogN | Normalization::Identity => 1.0,
            Normalization::ScalePow { exponent } => nf.powf(*exponent),
            Normalization::ScaleInvN => 1.0 / nf,
        }
    }
}

/// An observable J(<f_1>, ..., <f_k>) with the derivatives of J needed for
/// delta-method variances and portfolio generation.
#[derive(Clone)]
pub struct ObservableSpec {
    pub name: String,
    /// Outer map J on the vector of empirical averages.
    pub j: VectorMap,
    /// Gradient of J.
    pub grad_j: GradientMap,
    /// Hessian of J (needed only by portfolio generation).
    pub hess_j: Option<HessianMap>,
    /// Open domain of J; averages outside it make the observable undefined.
    pub in_domain: DomainCheck,
    pub test_functions: Vec<TestFunction>,
    pub normalization: Normalization,
}

impl fmt::Debug for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservableSpec")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl ObservableSpec {
    pub fn dim(&self) -> usize {
        self.test_functions.len()
    }
}

/// Named observable families, the serializable handle used by configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ObservableKind {
    /// H(mu) = -sum mu_i log mu_i, CLT-normalized as H - log n.
    Entropy,
    /// D_p(mu) = (sum mu_i^p)^{1/p}, CLT-normalized as n^{(p-1)/p} D_p.
    LpDiversity { p: f64 },
    /// S(mu) = (prod mu_i)^{1/n}, CLT-normalized as n S.
    GeometricMean,
}

impl ObservableKind {
    pub fn label(&self) -> String {
        match self {
            ObservableKind::Entropy => "entropy".into(),
            ObservableKind::LpDiversity { p } => format!("lp_diversity(p={p})"),
            ObservableKind::GeometricMean => "geometric_mean".into(),
        }
    }

    /// Builds the observable's J, gradient, Hessian, and test functions.
    pub fn spec(&self) -> Result<ObservableSpec> {
        match self {
            ObservableKind::Entropy => Ok(entropy_observable()),
            ObservableKind::LpDiversity { p } => lp_diversity_observable(*p),
            ObservableKind::GeometricMean => Ok(geometric_mean_observable()),
        }
    }
}

fn exp_fn() -> TestFunction {
    TestFunction {
        name: "exp(x)".into(),
        f: Arc::new(f64::exp),
        d1: Arc::new(f64::exp),
        d2: Arc::new(f64::exp),
        d3: Arc::new(f64::exp),
        growth: 1.0,
    }
}

fn x_exp_fn() -> TestFunction {
    TestFunction {
        name: "x exp(x)".into(),
        f: Arc::new(|x: f64| x * x.exp()),
        d1: Arc::new(|x: f64| (x + 1.0) * x.exp()),
        d2: Arc::new(|x: f64| (x + 2.0) * x.exp()),
        d3: Arc::new(|x: f64| (x + 3.0) * x.exp()),
        growth: 1.0,
    }
}

fn p_exp_fn(p: f64) -> TestFunction {
    TestFunction {
        name: format!("exp({p} x)"),
        f: Arc::new(move |x: f64| (p * x).exp()),
        d1: Arc::new(move |x: f64| p * (p * x).exp()),
        d2: Arc::new(move |x: f64| p * p * (p * x).exp()),
        d3: Arc::new(move |x: f64| p * p * p * (p * x).exp()),
        growth: p,
    }
}

fn identity_fn() -> TestFunction {
    TestFunction {
        name: "x".into(),
        f: Arc::new(|x: f64| x),
        d1: Arc::new(|_| 1.0),
        d2: Arc::new(|_| 0.0),
        d3: Arc::new(|_| 0.0),
        growth: 0.0,
    }
}

/// Entropy observable: J(m) = log m_1 - m_2 / m_1 over f = (e^x, x e^x).
///
/// Evaluated at the empirical averages of n softmax-weighted particles this
/// equals H(mu) - log n exactly.
pub fn entropy_observable() -> ObservableSpec {
    ObservableSpec {
        name: "entropy".into(),
        j: Arc::new(|m: &[f64]| m[0].ln() - m[1] / m[0]),
        grad_j: Arc::new(|m: &[f64]| {
            vec![1.0 / m[0] + m[1] / (m[0] * m[0]), -1.0 / m[0]]
        }),
        hess_j: Some(Arc::new(|m: &[f64]| {
            let m0 = m[0];
            let j11 = -1.0 / (m0 * m0) - 2.0 * m[1] / (m0 * m0 * m0);
            let j12 = 1.0 / (m0 * m0);
            vec![vec![j11, j12], vec![j12, 0.0]]
        })),
        in_domain: Arc::new(|m: &[f64]| m[0] > 0.0 && m.iter().all(|v| v.is_finite())),
        test_functions: vec![exp_fn(), x_exp_fn()],
        normalization: Normalization::AddLogN,
    }
}

/// l^p diversity observable for 0 < p < 1:
/// J(m) = m_1^{1/p} / m_2 over f = (e^{p x}, e^x).
///
/// Evaluated at n softmax-weighted particles this equals
/// n^{(p-1)/p} D_p(mu) exactly.
pub fn lp_diversity_observable(p: f64) -> Result<ObservableSpec> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "l^p diversity needs 0 < p < 1, got {p}"
        )));
    }
    let ip = 1.0 / p;
    Ok(ObservableSpec {
        name: format!("lp_diversity(p={p})"),
        j: Arc::new(move |m: &[f64]| m[0].powf(ip) / m[1]),
        grad_j: Arc::new(move |m: &[f64]| {
            vec![
                ip * m[0].powf(ip - 1.0) / m[1],
                -m[0].powf(ip) / (m[1] * m[1]),
            ]
        }),
        hess_j: Some(Arc::new(move |m: &[f64]| {
            let j11 = ip * (ip - 1.0) * m[0].powf(ip - 2.0) / m[1];
            let j12 = -ip * m[0].powf(ip - 1.0) / (m[1] * m[1]);
            let j22 = 2.0 * m[0].powf(ip) / (m[1] * m[1] * m[1]);
            vec![vec![j11, j12], vec![j12, j22]]
        })),
        in_domain: Arc::new(|m: &[f64]| {
            m[0] > 0.0 && m[1] > 0.0 && m.iter().all(|v| v.is_finite())
        }),
        test_functions: vec![p_exp_fn(p), exp_fn()],
        normalization: Normalization::ScalePow {
            exponent: (1.0 - p) / p,
        },
    })
}

/// Geometric mean observable: J(m) = e^{m_1} / m_2 over f = (x, e^x).
///
/// Evaluated at n softmax-weighted particles this equals n S(mu) exactly.
pub fn geometric_mean_observable() -> ObservableSpec {
    ObservableSpec {
        name: "geometric_mean".into(),
        j: Arc::new(|m: &[f64]| m[0].exp() / m[1]),
        grad_j: Arc::new(|m: &[f64]| {
            let e = m[0].exp();
            vec![e / m[1], -e / (m[1] * m[1])]
        }),
        hess_j: Some(Arc::new(|m: &[f64]| {
            let e = m[0].exp();
            let j11 = e / m[1];
            let j12 = -e / (m[1] * m[1]);
            let j22 = 2.0 * e / (m[1] * m[1] * m[1]);
            vec![vec![j11, j12], vec![j12, j22]]
        })),
        in_domain: Arc::new(|m: &[f64]| m[1] > 0.0 && m.iter().all(|v| v.is_finite())),
        test_functions: vec![identity_fn(), exp_fn()],
        normalization: Normalization::ScaleInvN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn check_grad_and_hess(obs: &ObservableSpec, m: &[f64]) {
        let h = 1e-6;
        let grad = (obs.grad_j)(m);
        for i in 0..m.len() {
            let mut up = m.to_vec();
            let mut dn = m.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = ((obs.j)(&up) - (obs.j)(&dn)) / (2.0 * h);
            assert_abs_diff_eq!(fd, grad[i], epsilon = 2e-5 * (1.0 + grad[i].abs()));
        }
        if let Some(hess) = &obs.hess_j {
            let hm = hess(m);
            for i in 0..m.len() {
                let mut up = m.to_vec();
                let mut dn = m.to_vec();
                up[i] += h;
                dn[i] -= h;
                let gu = (obs.grad_j)(&up);
                let gd = (obs.grad_j)(&dn);
                for j in 0..m.len() {
                    let fd = (gu[j] - gd[j]) / (2.0 * h);
                    assert_abs_diff_eq!(fd, hm[i][j], epsilon = 5e-5 * (1.0 + hm[i][j].abs()));
                    assert_abs_diff_eq!(hm[i][j], hm[j][i], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropy_derivatives_match_finite_differences() {
        check_grad_and_hess(&entropy_observable(), &[1.3, 0.4]);
        check_grad_and_hess(&entropy_observable(), &[0.7, -0.2]);
    }

    #[test]
    fn diversity_derivatives_match_finite_differences() {
        let obs = lp_diversity_observable(0.5).unwrap();
        check_grad_and_hess(&obs, &[1.3, 1.1]);
        check_grad_and_hess(&obs, &[0.6, 2.0]);
    }

    #[test]
    fn geometric_mean_derivatives_match_finite_differences() {
        check_grad_and_hess(&geometric_mean_observable(), &[0.3, 1.4]);
    }

    #[test]
    fn test_function_derivative_chains_are_consistent() {
        let obs = entropy_observable();
        for tf in &obs.test_functions {
            for k in -4..=4 {
                let x = k as f64 * 0.5;
                let h = 1e-6;
                let fd1 = ((tf.f)(x + h) - (tf.f)(x - h)) / (2.0 * h);
                let fd2 = ((tf.d1)(x + h) - (tf.d1)(x - h)) / (2.0 * h);
                let fd3 = ((tf.d2)(x + h) - (tf.d2)(x - h)) / (2.0 * h);
                let scale = 1.0 + (tf.f)(x).abs();
                assert_abs_diff_eq!(fd1, (tf.d1)(x), epsilon = 1e-5 * scale);
                assert_abs_diff_eq!(fd2, (tf.d2)(x), epsilon = 1e-5 * scale);
                assert_abs_diff_eq!(fd3, (tf.d3)(x), epsilon = 1e-5 * scale);
            }
        }
    }

    #[test]
    fn diversity_rejects_p_outside_open_unit_interval() {
        assert!(lp_diversity_observable(0.0).is_err());
        assert!(lp_diversity_observable(1.0).is_err());
        assert!(lp_diversity_observable(-0.3).is_err());
        assert!(lp_diversity_observable(1.7).is_err());
    }

    #[test]
    fn observable_kind_round_trips_through_json() {
        let kinds = [
            ObservableKind::Entropy,
            ObservableKind::LpDiversity { p: 0.5 },
            ObservableKind::GeometricMean,
        ];
        for k in kinds {
            let json = serde_json::to_string(&k).unwrap();
            let back: ObservableKind = serde_json::from_str(&json).unwrap();
            assert_eq!(k, back, "round trip changed {json}");
            k.spec().unwrap();
        }
    }

    #[test]
    fn normalization_maps_are_consistent_with_scale() {
        let n = 16;
        for norm in [
            Normalization::AddLogN,
            Normalization::ScalePow { exponent: 1.0 },
            Normalization::ScaleInvN,
            Normalization::Identity,
        ] {
            let j = 0.37;
            let scaled = norm.to_market(j, n) - norm.to_market(0.0, n);
            assert_abs_diff_eq!(scaled, norm.market_scale(n) * j, epsilon = 1e-14);
        }
    }
}
