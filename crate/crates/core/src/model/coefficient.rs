//! Drift and volatility coefficients as functions of the rank r in [0, 1].
//!
//! Every family carries exact antiderivatives: B(r) = integral of b from 0
//! to r drives the hyperbolic flux of the limit PDE, and the integral of
//! sigma^2 / 2 drives its diffusive part. Keeping both in closed form avoids
//! quadrature error in the PDE right-hand side.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Number of probe points for range scans over [0, 1].
const RANGE_PROBES: usize = 2001;

/// Coefficient families closed under the operations the solvers need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Coefficient {
    /// params = [c]: the constant c.
    Constant([f64; 1]),
    /// params = [c0, c1]: c0 + c1 r.
    Affine([f64; 2]),
    /// params = [c0, c1, ..., ck]: sum of ci r^i.
    Polynomial(Vec<f64>),
    /// params = [c, alpha] with alpha >= 0: c r^alpha.
    Power([f64; 2]),
}

impl Coefficient {
    /// Checks parameter finiteness and family constraints.
    pub fn validate(&self) -> Result<()> {
        let params: &[f64] = match self {
            Coefficient::Constant(p) => p,
            Coefficient::Affine(p) => p,
            Coefficient::Polynomial(p) => p,
            Coefficient::Power(p) => p,
        };
        if params.is_empty() {
            return Err(Error::InvalidParameter(
                "coefficient needs at least one parameter".into(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(
                "coefficient parameters must be finite".into(),
            ));
        }
        if let Coefficient::Power([_, alpha]) = self {
            if *alpha < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "power coefficient needs alpha >= 0, got {alpha}"
                )));
            }
        }
        Ok(())
    }

    /// Value at rank r.
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Coefficient::Constant([c]) => *c,
            Coefficient::Affine([c0, c1]) => c0 + c1 * r,
            Coefficient::Polynomial(cs) => horner(cs, r),
            Coefficient::Power([c, alpha]) => {
                if *alpha == 0.0 {
                    *c
                } else {
                    c * r.powf(*alpha)
                }
            }
        }
    }

    /// Derivative at rank r. For the power family with 0 < alpha < 1 the
    /// derivative blows up at r = 0; the IEEE infinity is returned as is.
    pub fn deriv(&self, r: f64) -> f64 {
        match self {
            Coefficient::Constant(_) => 0.0,
            Coefficient::Affine([_, c1]) => *c1,
            Coefficient::Polynomial(cs) => {
                let d: Vec<f64> = cs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| k as f64 * c)
                    .collect();
                if d.is_empty() {
                    0.0
                } else {
                    horner(&d, r)
                }
            }
            Coefficient::Power([c, alpha]) => {
                if *alpha == 0.0 {
                    0.0
                } else {
                    c * alpha * r.powf(alpha - 1.0)
                }
            }
        }
    }

    /// Exact antiderivative: integral of the coefficient from 0 to r.
    pub fn antiderivative(&self, r: f64) -> f64 {
        match self {
            Coefficient::Constant([c]) => c * r,
            Coefficient::Affine([c0, c1]) => r * (c0 + 0.5 * c1 * r),
            Coefficient::Polynomial(cs) => {
                let integ: Vec<f64> = std::iter::once(0.0)
                    .chain(cs.iter().enumerate().map(|(k, c)| c / (k as f64 + 1.0)))
                    .collect();
                horner(&integ, r)
            }
            Coefficient::Power([c, alpha]) => c * r.powf(alpha + 1.0) / (alpha + 1.0),
        }
    }

    /// Exact antiderivative of the squared coefficient halved:
    /// integral of eval(s)^2 / 2 for s from 0 to r.
    pub fn squared_half_antiderivative(&self, r: f64) -> f64 {
        match self {
            Coefficient::Constant([c]) => 0.5 * c * c * r,
            Coefficient::Affine([c0, c1]) => {
                // (c0 + c1 s)^2 / 2 integrates to ((c0 + c1 r)^3 - c0^3) / (6 c1).
                if *c1 == 0.0 {
                    0.5 * c0 * c0 * r
                } else {
                    let u = c0 + c1 * r;
                    (u * u * u - c0 * c0 * c0) / (6.0 * c1)
                }
            }
            Coefficient::Polynomial(cs) => {
                let mut sq = vec![0.0; 2 * cs.len() - 1];
                for (i, a) in cs.iter().enumerate() {
                    for (j, b) in cs.iter().enumerate() {
                        sq[i + j] += a * b;
                    }
                }
                let integ: Vec<f64> = std::iter::once(0.0)
                    .chain(sq.iter().enumerate().map(|(k, c)| 0.5 * c / (k as f64 + 1.0)))
                    .collect();
                horner(&integ, r)
            }
            Coefficient::Power([c, alpha]) => {
                0.5 * c * c * r.powf(2.0 * alpha + 1.0) / (2.0 * alpha + 1.0)
            }
        }
    }

    /// Minimum and maximum over [0, 1], by a dense probe scan.
    pub fn range_on_unit(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..RANGE_PROBES {
            let r = k as f64 / (RANGE_PROBES - 1) as f64;
            let v = self.eval(r);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Maximum absolute value over [0, 1].
    pub fn max_abs_on_unit(&self) -> f64 {
        let (lo, hi) = self.range_on_unit();
        lo.abs().max(hi.abs())
    }

    /// Whether the family is C^1 on [0, 1] with a locally Holder-continuous
    /// derivative. Polynomials and constants always are; the power family
    /// only when the exponent is 0, 1, or at least 2 - delta in a way that
    /// keeps the derivative Holder (alpha >= 1 suffices, and integer alphas
    /// are polynomial anyway).
    pub fn has_holder_smooth_derivative(&self) -> bool {
        match self {
            Coefficient::Constant(_) | Coefficient::Affine(_) | Coefficient::Polynomial(_) => true,
            Coefficient::Power([_, alpha]) => *alpha == 0.0 || *alpha >= 1.0,
        }
    }

    /// True when the coefficient is the constant 1 everywhere on [0, 1].
    pub fn is_identically_one(&self) -> bool {
        let (lo, hi) = self.range_on_unit();
        (lo - 1.0).abs() <= 1e-14 && (hi - 1.0).abs() <= 1e-14
    }
}

fn horner(cs: &[f64], r: f64) -> f64 {
    let mut acc = 0.0;
    for c in cs.iter().rev() {
        acc = acc * r + c;
    }
    acc
}
