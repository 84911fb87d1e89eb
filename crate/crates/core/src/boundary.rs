//! Bid density estimation without boundary bias.
//!
//! In the interior the estimator is a plain kernel density estimate with the
//! fourth-order triweight. Within one bandwidth of an endpoint the kernel is
//! replaced by the local-quadratic kernel `(a0 + a1 u + a2 u^2) K(u)` whose
//! moments of order 0, 1 and 2 over the feasible range are `(1, 0, 0)`, so
//! the bias order is the same everywhere on the support.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{boundary_coefficients, weighted_triweight_coeffs, FOURTH_ORDER_FACTOR};
use crate::polysum::WindowSum;

/// Density values below this are floored wherever they end up in a denominator.
pub const DENSITY_FLOOR: f64 = 1e-10;

/// Relative slack when checking that a query lies inside the support.
const SUPPORT_SLACK: f64 = 1e-12;

#[derive(Debug)]
pub struct BidDensity {
    sums: WindowSum,
    lo: f64,
    hi: f64,
    h: f64,
    norm: f64,
    floor_events: AtomicUsize,
}

impl Clone for BidDensity {
    fn clone(&self) -> Self {
        Self {
            sums: self.sums.clone(),
            lo: self.lo,
            hi: self.hi,
            h: self.h,
            norm: self.norm,
            floor_events: AtomicUsize::new(self.floor_events.load(Ordering::Relaxed)),
        }
    }
}

impl BidDensity {
    /// Density of `bids` on the support `[lo, hi]` with bandwidth `h`.
    pub fn new(bids: &[f64], lo: f64, hi: f64, h: f64) -> Result<Self> {
        if bids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
        }
        if !(hi >= lo) {
            return Err(Error::invalid(format!("support [{lo}, {hi}] is empty")));
        }
        Ok(Self {
            sums: WindowSum::new(bids.to_vec(), h),
            lo,
            hi,
            h,
            norm: bids.len() as f64,
            floor_events: AtomicUsize::new(0),
        })
    }

    /// Divides by `norm` instead of the number of bids.
    pub fn with_normalizer(mut self, norm: f64) -> Self {
        self.norm = norm;
        self
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn check(&self, b: f64) -> Result<f64> {
        let slack = SUPPORT_SLACK * (self.hi - self.lo).abs().max(self.h);
        if !b.is_finite() || b < self.lo - slack || b > self.hi + slack {
            return Err(Error::OutOfDomain {
                what: "bid",
                value: b,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(b.clamp(self.lo, self.hi))
    }

    /// `(a0, a1, a2)` of the kernel used at `b`.
    pub fn kernel_factor_at(&self, b: f64) -> [f64; 3] {
        let below = (b - self.lo) / self.h;
        let above = (self.hi - b) / self.h;
        if below >= 1.0 && above >= 1.0 {
            return FOURTH_ORDER_FACTOR;
        }
        // A degenerate support (hi == lo) leaves no room; fall back to the
        // interior kernel, which integrates to one on the full range.
        boundary_coefficients(-below, above).unwrap_or(FOURTH_ORDER_FACTOR)
    }

    /// Power-basis coefficients (in `u = (x - b)/h`) of the kernel used at `b`.
    pub fn kernel_coeffs_at(&self, b: f64) -> [f64; 9] {
        weighted_triweight_coeffs(self.kernel_factor_at(b))
    }

    /// Raw estimate, possibly negative.
    pub fn density(&self, b: f64) -> Result<f64> {
        let b = self.check(b)?;
        Ok(self.density_unchecked(b))
    }

    pub(crate) fn density_unchecked(&self, b: f64) -> f64 {
        let coeffs = self.kernel_coeffs_at(b);
        self.sums.sum(b, &coeffs) / (self.norm * self.h)
    }

    /// Estimate floored at [`DENSITY_FLOOR`]; each floor event is counted.
    pub fn floored(&self, b: f64) -> Result<f64> {
        let b = self.check(b)?;
        Ok(self.floored_unchecked(b))
    }

    pub(crate) fn floored_unchecked(&self, b: f64) -> f64 {
        let g = self.density_unchecked(b);
        if g < DENSITY_FLOOR {
            self.floor_events.fetch_add(1, Ordering::Relaxed);
            DENSITY_FLOOR
        } else {
            g
        }
    }

    pub fn floor_events(&self) -> usize {
        self.floor_events.load(Ordering::Relaxed)
    }
}

/// Convenience wrapper: raw boundary-corrected bid density at `b`.
pub fn bid_density(sample: &crate::sample::BidSample, b: f64, h_g: f64) -> Result<f64> {
    let (lo, hi) = sample.support_bounds();
    BidDensity::new(sample.bids(), lo, hi, h_g)?.density(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::fourth_order_triweight;
    use crate::quadrature::GaussLegendre;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_bids(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| 0.8 * rng.gen::<f64>()).collect()
    }

    #[test]
    fn interior_equals_plain_fourth_order_kde() {
        let bids = uniform_bids(300, 1);
        let (lo, hi) = bids.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let h = 0.15;
        let d = BidDensity::new(&bids, lo, hi, h).unwrap();
        for b in [0.2, 0.4, 0.55] {
            let direct: f64 = bids
                .iter()
                .map(|&x| fourth_order_triweight((x - b) / h) / h)
                .sum::<f64>()
                / bids.len() as f64;
            assert!((d.density(b).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_kernel_moments_by_quadrature() {
        let rule = GaussLegendre::new(40);
        let d = BidDensity::new(&[0.0, 1.0], 0.0, 1.0, 0.25).unwrap();
        for i in 0..=100 {
            let b = 0.25 * i as f64 / 100.0;
            let coeffs = d.kernel_coeffs_at(b);
            let rho = b / 0.25;
            for k in 0..3 {
                let m = rule.integrate(-rho, 1.0, |u| {
                    crate::kernels::poly_eval(&coeffs, u) * u.powi(k)
                });
                let want = if k == 0 { 1.0 } else { 0.0 };
                assert!((m - want).abs() < 1e-10, "rho={rho} k={k} m={m}");
            }
        }
    }

    #[test]
    fn uniform_design_midpoint() {
        let bids = uniform_bids(2100, 3);
        let (lo, hi) = bids.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let sd = crate::sample::sample_std(&bids);
        let h = 3.72 * sd * 2100f64.powf(-0.2);
        let d = BidDensity::new(&bids, lo, hi, h).unwrap();
        let g = d.density(0.4).unwrap();
        assert!((g - 1.25).abs() < 0.1, "{g}");
        // boundary estimates stay on the right scale as well
        for b in [lo, lo + 0.5 * h, hi - 0.5 * h, hi] {
            let g = d.density(b).unwrap();
            assert!((g - 1.25).abs() < 0.5, "b={b}: {g}");
        }
    }

    #[test]
    fn out_of_support_is_rejected() {
        let d = BidDensity::new(&[0.1, 0.2, 0.3], 0.1, 0.3, 0.1).unwrap();
        assert!(matches!(d.density(0.05), Err(Error::OutOfDomain { .. })));
        assert!(d.density(0.31).is_err());
        assert!(d.density(f64::NAN).is_err());
        assert!(d.density(0.3).is_ok());
    }

    #[test]
    fn floor_counts_events() {
        // a lone far-away point makes the fourth-order kernel negative
        let d = BidDensity::new(&[0.0, 0.2, 0.9, 2.0], 0.0, 2.0, 0.5).unwrap();
        let raw = d.density(1.25).unwrap();
        assert!(raw < 0.0, "{raw}");
        assert_eq!(d.floored(1.25).unwrap(), DENSITY_FLOOR);
        assert_eq!(d.floor_events(), 1);
    }
}
