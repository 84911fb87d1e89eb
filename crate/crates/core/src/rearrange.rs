//! Smooth rearrangement of the inverse bidding strategy.
//!
//! `ŝ(t) = b_lo + d Σ_{i=1..M} K~((t - ξ̂(b_lo + i d)) / h_r)` is a monotone
//! estimate of the bidding strategy. Its pseudo-inverse yields the
//! monotonicity-constrained pseudo-values.

use crate::error::{Error, Result};
use crate::kernels::{TRIWEIGHT, TRIWEIGHT_INTEGRAL};
use crate::polysum::WindowSum;
use crate::strategy::InverseBidCurve;

/// Smallest Riemann resolution accepted for the rearrangement.
pub const MIN_RESOLUTION: usize = 100;

/// Default `M = max(2000, 10 NL)`.
pub fn default_resolution(n_bids: usize) -> usize {
    (10 * n_bids).max(2000)
}

/// Power-basis coefficients of `u ↦ K~(-u)`.
const INTEGRAL_REFLECTED: [f64; 8] = reflect(TRIWEIGHT_INTEGRAL);

const fn reflect(c: [f64; 8]) -> [f64; 8] {
    let mut out = c;
    let mut k = 1;
    while k < 8 {
        out[k] = -c[k];
        k += 2;
    }
    out
}

#[derive(Debug, Clone)]
pub struct RearrangedStrategy {
    lo: f64,
    hi: f64,
    step: f64,
    h_r: f64,
    xi_min: f64,
    xi_max: f64,
    sums: WindowSum,
}

impl RearrangedStrategy {
    pub fn new(curve: &InverseBidCurve, h_r: f64) -> Result<Self> {
        if !(h_r > 0.0) || !h_r.is_finite() {
            return Err(Error::invalid(format!("h_r must be positive, got {h_r}")));
        }
        if curve.resolution() < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "Riemann resolution {} is below {MIN_RESOLUTION}",
                curve.resolution()
            )));
        }
        let (lo, hi) = curve.support();
        if !(hi > lo) {
            return Err(Error::DegenerateSample(format!(
                "bid support collapses to a point ({lo})"
            )));
        }
        Ok(Self {
            lo,
            hi,
            step: curve.step(),
            h_r,
            xi_min: curve.xi_min(),
            xi_max: curve.xi_max(),
            sums: WindowSum::new(curve.values().to_vec(), h_r),
        })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn bandwidth(&self) -> f64 {
        self.h_r
    }

    pub fn resolution(&self) -> usize {
        self.sums.len()
    }

    /// Search bracket `[ξ_min - h_r, ξ_max + h_r]`; `ŝ` is flat outside it.
    pub fn bracket(&self) -> (f64, f64) {
        (self.xi_min - self.h_r, self.xi_max + self.h_r)
    }

    /// `ŝ(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        let below = self.sums.count_lt(t - self.h_r);
        let hi = self.sums.count_le(t + self.h_r);
        let partial = self.sums.sum_range(below, hi, t, &INTEGRAL_REFLECTED);
        (self.lo + self.step * (below as f64 + partial)).min(self.hi)
    }

    /// `ŝ'(t) = (d/h_r) Σ K((ξ̂_i - t)/h_r)`.
    pub fn deriv(&self, t: f64) -> f64 {
        self.step / self.h_r * self.sums.sum(t, &TRIWEIGHT)
    }

    /// `inf{u : ŝ(u) ≥ b}`, searched inside [`Self::bracket`].
    ///
    /// At `b = b_lo` every `u` qualifies and the left bracket edge is returned.
    pub fn pseudo_inverse(&self, b: f64) -> Result<f64> {
        if !b.is_finite() || b < self.lo || b > self.hi {
            return Err(Error::OutOfDomain {
                what: "bid",
                value: b,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let (mut a, mut c) = self.bracket();
        if b <= self.lo {
            return Ok(a);
        }
        let tol = 1e-10 * (c - a);
        // Invariant: ŝ(a) < b ≤ ŝ(c). Newton steps inside the bracket,
        // bisection whenever a step leaves it.
        let mut x = 0.5 * (a + c);
        while c - a > tol {
            let fx = self.eval(x) - b;
            if fx >= 0.0 {
                c = x;
            } else {
                a = x;
            }
            if c - a <= tol {
                break;
            }
            let slope = self.deriv(x);
            let newton = if slope > 0.0 { x - fx / slope } else { f64::NAN };
            x = if newton > a && newton < c {
                // Once Newton has converged, straddle the root so the bracket closes.
                if (newton - x).abs() < 0.25 * tol {
                    if fx >= 0.0 {
                        (newton - 0.5 * tol).max(0.5 * (a + newton))
                    } else {
                        (newton + 0.5 * tol).min(0.5 * (newton + c))
                    }
                } else {
                    newton
                }
            } else {
                0.5 * (a + c)
            };
        }
        Ok(c)
    }

    /// `ŝ⁻¹(B)` for every bid, aligned with `bids`.
    pub fn constrained_pseudo_values(&self, bids: &[f64]) -> Result<Vec<f64>> {
        bids.iter().map(|&b| self.pseudo_inverse(b)).collect()
    }
}

/// Convenience constructor mirroring the estimator's two inputs.
pub fn smooth_strategy(curve: &InverseBidCurve, h_r: f64) -> Result<RearrangedStrategy> {
    RearrangedStrategy::new(curve, h_r)
}

/// `ŝ₀(t) = b_lo + d #{i : ξ̂(b_lo + i d) ≤ t}`, the indicator rearrangement.
#[derive(Debug, Clone)]
pub struct NonSmoothStrategy {
    lo: f64,
    hi: f64,
    step: f64,
    sorted: Vec<f64>,
}

impl NonSmoothStrategy {
    pub fn new(curve: &InverseBidCurve) -> Result<Self> {
        if curve.resolution() < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "Riemann resolution {} is below {MIN_RESOLUTION}",
                curve.resolution()
            )));
        }
        let (lo, hi) = curve.support();
        let mut sorted = curve.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            lo,
            hi,
            step: curve.step(),
            sorted,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.sorted.partition_point(|&x| x <= t);
        (self.lo + self.step * k as f64).min(self.hi)
    }

    /// `inf{u : ŝ₀(u) ≥ b}`: the k-th smallest grid value, where k is the
    /// number of steps needed to reach `b`. Below the first step the left
    /// edge `min ξ̂` is returned.
    pub fn pseudo_inverse(&self, b: f64) -> Result<f64> {
        if !b.is_finite() || b < self.lo || b > self.hi {
            return Err(Error::OutOfDomain {
                what: "bid",
                value: b,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let m = self.sorted.len();
        let mut k = (((b - self.lo) / self.step).ceil().max(0.0) as usize).min(m);
        while k > 0 && self.lo + self.step * ((k - 1) as f64) >= b {
            k -= 1;
        }
        while k < m && self.lo + self.step * (k as f64) < b {
            k += 1;
        }
        if k == 0 {
            return Ok(self.sorted[0]);
        }
        Ok(self.sorted[k - 1])
    }
}

pub fn nonsmooth_strategy(curve: &InverseBidCurve) -> Result<NonSmoothStrategy> {
    NonSmoothStrategy::new(curve)
}
