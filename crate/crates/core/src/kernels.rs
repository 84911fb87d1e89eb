//! Triweight kernels, their calculus, boundary-adapted variants, and the
//! kernel-convolution constants entering the asymptotic variances.
//!
//! Every kernel here is a polynomial on [-1, 1] and zero outside, so each is
//! also exposed as a coefficient vector in the power basis. The windowed sums
//! in [`crate::polysum`] consume those vectors directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

const C: f64 = 35.0 / 32.0;

/// `K(u) = 35/32 (1 - u^2)^3` in the power basis.
pub const TRIWEIGHT: [f64; 7] = [C, 0.0, -3.0 * C, 0.0, 3.0 * C, 0.0, -C];

/// `K'(u) = -105/16 u (1 - u^2)^2`.
pub const TRIWEIGHT_DERIV: [f64; 6] = [
    0.0,
    -105.0 / 16.0,
    0.0,
    210.0 / 16.0,
    0.0,
    -105.0 / 16.0,
];

/// `K~(u) = 1/2 + 35/32 (u - u^3 + 3u^5/5 - u^7/7)` on [-1, 1].
pub const TRIWEIGHT_INTEGRAL: [f64; 8] = [
    0.5,
    C,
    0.0,
    -C,
    0.0,
    3.0 * C / 5.0,
    0.0,
    -C / 7.0,
];

/// Second moment of the triweight, `∫u²K = 1/9`.
pub const TRIWEIGHT_MU2: f64 = 1.0 / 9.0;
/// Fourth moment of the triweight, `∫u⁴K = 1/33`.
pub const TRIWEIGHT_MU4: f64 = 1.0 / 33.0;

/// Multiplier `(a0, a1, a2)` turning the triweight into the interior
/// fourth-order kernel: `(27 - 99u^2)/16`.
pub const FOURTH_ORDER_FACTOR: [f64; 3] = [27.0 / 16.0, 0.0, -99.0 / 16.0];

pub fn poly_eval(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Exact `∫_lo^hi p(u) du` for a power-basis polynomial.
pub(crate) fn poly_integral(coeffs: &[f64], lo: f64, hi: f64) -> f64 {
    let anti = |u: f64| {
        coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * u + c / (k as f64 + 1.0))
            * u
    };
    anti(hi) - anti(lo)
}

#[inline]
pub fn triweight(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    let t = 1.0 - u * u;
    C * t * t * t
}

/// Same as [`triweight`] but rejects NaN and infinities.
pub fn triweight_checked(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::invalid(format!("kernel argument must be finite, got {u}")));
    }
    Ok(triweight(u))
}

#[inline]
pub fn triweight_deriv(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    let t = 1.0 - u * u;
    -105.0 / 16.0 * u * t * t
}

/// Closed-form antiderivative `∫_{-∞}^u K`, clamped to 0 / 1 outside the support.
#[inline]
pub fn triweight_integral(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        poly_eval(&TRIWEIGHT_INTEGRAL, u)
    }
}

/// Fourth-order triweight `((27 - 99u^2)/16) K(u)`.
#[inline]
pub fn fourth_order_triweight(u: f64) -> f64 {
    (27.0 - 99.0 * u * u) / 16.0 * triweight(u)
}

/// Power-basis coefficients of `(a0 + a1 u + a2 u^2) K(u)`.
pub fn weighted_triweight_coeffs(factor: [f64; 3]) -> [f64; 9] {
    let p = poly_mul(&factor, &TRIWEIGHT);
    let mut out = [0.0; 9];
    out.copy_from_slice(&p);
    out
}

/// Coefficients `(a0, a1, a2)` of the local-quadratic kernel
/// `(a0 + a1 u + a2 u^2) K(u)` whose moments of order 0, 1, 2 over the
/// truncated range `[lo, hi] ∩ [-1, 1]` are `(1, 0, 0)`.
///
/// On the full range this reproduces [`FOURTH_ORDER_FACTOR`].
pub fn boundary_coefficients(lo: f64, hi: f64) -> Result<[f64; 3]> {
    let lo = lo.max(-1.0);
    let hi = hi.min(1.0);
    if !(hi > lo) {
        return Err(Error::invalid(format!("empty kernel range [{lo}, {hi}]")));
    }
    let mut m = [0.0; 5];
    for (k, mk) in m.iter_mut().enumerate() {
        let mut p = [0.0; 11];
        p[k..k + 7].copy_from_slice(&TRIWEIGHT);
        *mk = poly_integral(&p, lo, hi);
    }
    let mut a = [[m[0], m[1], m[2]], [m[1], m[2], m[3]], [m[2], m[3], m[4]]];
    let mut rhs = [1.0, 0.0, 0.0];
    solve3(&mut a, &mut rhs)?;
    Ok(rhs)
}

fn solve3(a: &mut [[f64; 3]; 3], b: &mut [f64; 3]) -> Result<()> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular boundary moment system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..3).rev() {
        let mut s = b[col];
        for k in col + 1..3 {
            s -= a[col][k] * b[k];
        }
        b[col] = s / a[col][col];
    }
    Ok(())
}

/// Tabulated boundary kernels over relative boundary distances ρ ∈ [0, 1].
///
/// Row `i` holds the coefficients for a point ρ bandwidths away from the
/// nearer (lower) endpoint, i.e. the kernel restricted to `u ∈ [-ρ, 1]`.
/// Near the upper endpoint the kernel is the mirror image `(a0, -a1, a2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryKernelTable {
    pub rho_grid: Vec<f64>,
    pub coeffs: Vec<[f64; 3]>,
}

impl BoundaryKernelTable {
    pub fn new(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid("boundary table needs at least two rows"));
        }
        let rho_grid: Vec<f64> = (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .collect();
        let coeffs = rho_grid
            .iter()
            .map(|&rho| boundary_coefficients(-rho, 1.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rho_grid, coeffs })
    }
}

/// Which kernel plays the role of `K_g` in the convolution constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BidKernelOrder {
    /// The plain second-order triweight used for all three kernel roles.
    Second,
    /// The fourth-order triweight, the interior equivalent of the
    /// local-quadratic bid density estimator.
    #[default]
    Fourth,
}

impl BidKernelOrder {
    fn eval(self, u: f64) -> f64 {
        match self {
            BidKernelOrder::Second => triweight(u),
            BidKernelOrder::Fourth => fourth_order_triweight(u),
        }
    }
}

/// The two value-density estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Gpv,
    Rgpv,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Gpv => "gpv",
            Estimator::Rgpv => "rgpv",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gpv" => Ok(Estimator::Gpv),
            "rgpv" => Ok(Estimator::Rgpv),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Kernel constant of the asymptotic variance with the fourth-order `K_g` and
/// 32-node piecewise Gauss–Legendre rules.
///
/// * `Gpv`:  `∫ { ∫ K'(u) K_g(w - c u) du }² dw`
/// * `Rgpv`: `∫ { ∫∫ K'(u) K(u - z) K_g(w - c z) dz du }² dw`
pub fn asymptotic_kernel_constant(kind: Estimator, c: f64) -> Result<f64> {
    asymptotic_kernel_constant_with(kind, c, BidKernelOrder::Fourth, 32)
}

/// Integrands are piecewise polynomials; every integral is split at the
/// points where a kernel support edge enters, so the rule is exact once
/// `nodes` covers the polynomial degree (about 22 suffices).
pub fn asymptotic_kernel_constant_with(
    kind: Estimator,
    c: f64,
    bid_kernel: BidKernelOrder,
    nodes: usize,
) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("slope factor must be positive, got {c}")));
    }
    let rule = GaussLegendre::new(nodes);
    let kg = |x: f64| bid_kernel.eval(x);
    let value = match kind {
        Estimator::Gpv => {
            let inner = |w: f64| {
                let lo = (-1.0f64).max((w - 1.0) / c);
                let hi = 1.0f64.min((w + 1.0) / c);
                rule.integrate(lo, hi, |u| triweight_deriv(u) * kg(w - c * u))
            };
            let edge = 1.0 + c;
            rule.integrate_pieces(-edge, edge, &[1.0 - c, c - 1.0], |w| inner(w).powi(2))
        }
        Estimator::Rgpv => {
            // h(z) = ∫ K'(u) K(u - z) du, a polynomial on [-2, 0] and on [0, 2].
            let conv = |z: f64| {
                let lo = (-1.0f64).max(z - 1.0);
                let hi = 1.0f64.min(z + 1.0);
                rule.integrate(lo, hi, |u| triweight_deriv(u) * triweight(u - z))
            };
            let inner = |w: f64| {
                let lo = (-2.0f64).max((w - 1.0) / c);
                let hi = 2.0f64.min((w + 1.0) / c);
                rule.integrate_pieces(lo, hi, &[0.0], |z| conv(z) * kg(w - c * z))
            };
            let edge = 1.0 + 2.0 * c;
            let breaks = [
                1.0 - 2.0 * c,
                -1.0 + 2.0 * c,
                -1.0,
                1.0,
            ];
            rule.integrate_pieces(-edge, edge, &breaks, |w| inner(w).powi(2))
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triweight_values() {
        assert_eq!(triweight(0.0), 1.09375);
        assert_eq!(triweight(1.0), 0.0);
        assert_eq!(triweight(-1.5), 0.0);
        assert!((triweight(0.5) - 0.46142578125).abs() < 1e-15);
        assert!(triweight_checked(f64::NAN).is_err());
        assert!(triweight_checked(f64::INFINITY).is_err());
    }

    #[test]
    fn fourth_order_value_at_zero() {
        assert!((fourth_order_triweight(0.0) - 945.0 / 512.0).abs() < 1e-15);
        assert_eq!(fourth_order_triweight(1.0), 0.0);
    }

    #[test]
    fn integral_endpoints_and_symmetry() {
        assert_eq!(triweight_integral(-1.0), 0.0);
        assert_eq!(triweight_integral(1.0), 1.0);
        assert!((triweight_integral(0.0) - 0.5).abs() < 1e-16);
        assert!((poly_eval(&TRIWEIGHT_INTEGRAL, 1.0) - 1.0).abs() < 1e-15);
        assert!(poly_eval(&TRIWEIGHT_INTEGRAL, -1.0).abs() < 1e-15);
    }

    #[test]
    fn coefficient_vectors_match_closed_forms() {
        for i in 0..=40 {
            let u = -1.0 + i as f64 * 0.05;
            assert!((poly_eval(&TRIWEIGHT, u) - triweight(u)).abs() < 1e-14);
            assert!((poly_eval(&TRIWEIGHT_DERIV, u) - triweight_deriv(u)).abs() < 1e-13);
            let k4 = weighted_triweight_coeffs(FOURTH_ORDER_FACTOR);
            assert!((poly_eval(&k4, u) - fourth_order_triweight(u)).abs() < 1e-13);
        }
    }

    #[test]
    fn full_range_boundary_kernel_is_fourth_order() {
        let a = boundary_coefficients(-1.0, 1.0).unwrap();
        for k in 0..3 {
            assert!((a[k] - FOURTH_ORDER_FACTOR[k]).abs() < 1e-10, "{a:?}");
        }
        let t = BoundaryKernelTable::new(101).unwrap();
        let last = t.coeffs.last().unwrap();
        assert!((last[0] - 27.0 / 16.0).abs() < 1e-10);
        assert!(last[1].abs() < 1e-10);
        assert!((last[2] + 99.0 / 16.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_constant_rejects_nonpositive_slope() {
        assert!(asymptotic_kernel_constant(Estimator::Gpv, 0.0).is_err());
        assert!(asymptotic_kernel_constant(Estimator::Rgpv, -1.0).is_err());
        assert!(asymptotic_kernel_constant(Estimator::Rgpv, f64::NAN).is_err());
    }

    #[test]
    fn kernel_constant_stable_under_node_doubling() {
        for kind in [Estimator::Gpv, Estimator::Rgpv] {
            for order in [BidKernelOrder::Second, BidKernelOrder::Fourth] {
                for c in [0.3, 0.8, 1.7] {
                    let a = asymptotic_kernel_constant_with(kind, c, order, 32).unwrap();
                    let b = asymptotic_kernel_constant_with(kind, c, order, 64).unwrap();
                    assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{kind:?} {order:?} {c}");
                }
            }
        }
    }
}
