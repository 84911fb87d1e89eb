//! The plug-in inverse bidding strategy, unconstrained pseudo-values and the
//! unconstrained (GPV) value density.

use crate::boundary::BidDensity;
use crate::error::{Error, Result};
use crate::kernels::TRIWEIGHT;
use crate::polysum::WindowSum;
use crate::sample::{bid_bandwidth, BandwidthPlan, BidSample};

/// A bid distribution as seen by the inverse strategy: a CDF and a density
/// that is strictly positive on the support.
///
/// The kernel estimator implements this, and tests inject exact population
/// distributions through the same seam.
pub trait BidDistribution: Send + Sync {
    fn support(&self) -> (f64, f64);
    fn cdf(&self, b: f64) -> f64;
    /// Density, already floored away from zero.
    fn density(&self, b: f64) -> f64;
}

/// Empirical CDF plus the boundary-corrected kernel density.
#[derive(Debug, Clone)]
pub struct KernelBids {
    sorted: Vec<f64>,
    cdf_norm: f64,
    density: BidDensity,
}

impl KernelBids {
    pub fn new(bids: &[f64], lo: f64, hi: f64, h_g: f64) -> Result<Self> {
        let density = BidDensity::new(bids, lo, hi, h_g)?;
        let mut sorted = bids.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            cdf_norm: sorted.len() as f64,
            sorted,
            density,
        })
    }

    pub fn from_sample(sample: &BidSample, h_g: f64) -> Result<Self> {
        let (lo, hi) = sample.support_bounds();
        Self::new(sample.bids(), lo, hi, h_g)
    }

    /// Divide both the CDF and the density by `norm` instead of the bid count.
    pub fn with_normalizer(mut self, norm: f64) -> Self {
        self.cdf_norm = norm;
        self.density = self.density.with_normalizer(norm);
        self
    }

    pub fn bid_density(&self) -> &BidDensity {
        &self.density
    }

    pub fn floor_events(&self) -> usize {
        self.density.floor_events()
    }
}

impl BidDistribution for KernelBids {
    fn support(&self) -> (f64, f64) {
        self.density.support()
    }

    fn cdf(&self, b: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= b) as f64 / self.cdf_norm
    }

    fn density(&self, b: f64) -> f64 {
        let (lo, hi) = self.density.support();
        self.density.floored_unchecked(b.clamp(lo, hi))
    }
}

/// `ξ(b) = b + G(b) / ((N - 1) g(b))` for an arbitrary bid distribution.
pub fn inverse_bid_with<D: BidDistribution + ?Sized>(dist: &D, n_bidders: usize, b: f64) -> Result<f64> {
    let (lo, hi) = dist.support();
    if !b.is_finite() || b < lo || b > hi {
        return Err(Error::OutOfDomain {
            what: "bid",
            value: b,
            lo,
            hi,
        });
    }
    Ok(xi(dist, n_bidders, b))
}

#[inline]
fn xi<D: BidDistribution + ?Sized>(dist: &D, n_bidders: usize, b: f64) -> f64 {
    b + dist.cdf(b) / ((n_bidders - 1) as f64 * dist.density(b))
}

/// Plug-in inverse bid at `b` using the sample's CDF and kernel density.
pub fn inverse_bid(sample: &BidSample, b: f64, plan: &BandwidthPlan) -> Result<f64> {
    let bids = KernelBids::from_sample(sample, plan.h_g)?;
    inverse_bid_with(&bids, sample.n_bidders(), b)
}

/// `ξ̂` tabulated on the right-endpoint grid `b_lo + i d`, `i = 1..=M`.
#[derive(Debug, Clone)]
pub struct InverseBidCurve {
    n_bidders: usize,
    lo: f64,
    hi: f64,
    values: Vec<f64>,
    xi_min: f64,
    xi_max: f64,
}

impl InverseBidCurve {
    pub fn build<D: BidDistribution + ?Sized>(dist: &D, n_bidders: usize, m: usize) -> Result<Self> {
        if n_bidders < 2 {
            return Err(Error::invalid("inverse strategy needs at least two bidders"));
        }
        if m == 0 {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        let (lo, hi) = dist.support();
        let d = (hi - lo) / m as f64;
        let values: Vec<f64> = (1..=m)
            .map(|i| {
                let b = if i == m { hi } else { lo + i as f64 * d };
                xi(dist, n_bidders, b)
            })
            .collect();
        let (xi_min, xi_max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if !xi_min.is_finite() || !xi_max.is_finite() {
            return Err(Error::Numerical("inverse strategy is not finite on the grid".into()));
        }
        Ok(Self {
            n_bidders,
            lo,
            hi,
            values,
            xi_min,
            xi_max,
        })
    }

    pub fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Grid resolution `M`.
    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    /// `ξ̂(b_lo + i d)` for `i = 1..=M`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn xi_min(&self) -> f64 {
        self.xi_min
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }
}

/// Unconstrained pseudo-values `ξ̂(B_il)`, aligned with `bids`.
pub fn pseudo_values_with<D: BidDistribution + ?Sized>(dist: &D, n_bidders: usize, bids: &[f64]) -> Vec<f64> {
    bids.iter().map(|&b| xi(dist, n_bidders, b)).collect()
}

pub fn pseudo_values(sample: &BidSample, plan: &BandwidthPlan) -> Result<Vec<f64>> {
    let bids = KernelBids::from_sample(sample, plan.h_g)?;
    Ok(pseudo_values_with(&bids, sample.n_bidders(), sample.bids()))
}

/// Second-step kernel density of (pseudo-)values with the triweight.
#[derive(Debug, Clone)]
pub struct ValueDensity {
    sums: WindowSum,
    h: f64,
    norm: f64,
}

impl ValueDensity {
    pub fn new(values: &[f64], h_f: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(h_f > 0.0) || !h_f.is_finite() {
            return Err(Error::invalid(format!("h_f must be positive, got {h_f}")));
        }
        Ok(Self {
            sums: WindowSum::new(values.to_vec(), h_f),
            h: h_f,
            norm: values.len() as f64,
        })
    }

    pub fn with_normalizer(mut self, norm: f64) -> Self {
        self.norm = norm;
        self
    }

    pub fn density(&self, v: f64) -> f64 {
        self.sums.sum(v, &TRIWEIGHT) / (self.norm * self.h)
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        self.sums.points()
    }
}

/// `f̂_GPV(v)` for a sample and a full bandwidth plan.
pub fn gpv_density(sample: &BidSample, v: f64, plan: &BandwidthPlan) -> Result<f64> {
    let values = pseudo_values(sample, plan)?;
    Ok(ValueDensity::new(&values, plan.h_f)?.density(v))
}

/// Rule-of-thumb plan computed the way the estimators need it: `h_g` from the
/// bids, then `h_f = h_r` from the resulting unconstrained pseudo-values.
pub fn default_plan(sample: &BidSample) -> Result<BandwidthPlan> {
    let h_g = bid_bandwidth(sample)?;
    let bids = KernelBids::from_sample(sample, h_g)?;
    let values = pseudo_values_with(&bids, sample.n_bidders(), sample.bids());
    crate::sample::bandwidth_plan(sample, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bids of the θ = 1 design: uniform on [0, s_max].
    pub(crate) struct UniformBids {
        pub hi: f64,
    }

    impl BidDistribution for UniformBids {
        fn support(&self) -> (f64, f64) {
            (0.0, self.hi)
        }
        fn cdf(&self, b: f64) -> f64 {
            (b / self.hi).clamp(0.0, 1.0)
        }
        fn density(&self, _b: f64) -> f64 {
            1.0 / self.hi
        }
    }

    #[test]
    fn population_inverse_is_linear() {
        let dist = UniformBids { hi: 0.8 };
        assert!((inverse_bid_with(&dist, 5, 0.4).unwrap() - 0.5).abs() < 1e-15);
        for i in 0..20 {
            let b = 0.8 * i as f64 / 19.0;
            let want = b * (1.0 * 4.0 + 1.0) / (1.0 * 4.0);
            assert!((inverse_bid_with(&dist, 5, b).unwrap() - want).abs() < 1e-12);
        }
        assert!(inverse_bid_with(&dist, 5, 0.9).is_err());
    }

    #[test]
    fn inverse_at_minimum_bid() {
        let s = BidSample::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3).unwrap();
        let plan = BandwidthPlan::new(0.2, 0.2, 0.2).unwrap();
        let x = inverse_bid(&s, 0.1, &plan).unwrap();
        assert!(x > 0.1 && x < 0.2, "{x}");
        assert!(inverse_bid(&s, 0.05, &plan).is_err());
    }

    #[test]
    fn gpv_density_support() {
        let s = BidSample::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3).unwrap();
        let plan = BandwidthPlan::new(0.2, 0.05, 0.05).unwrap();
        let vals = pseudo_values(&s, &plan).unwrap();
        let vmax = vals.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(gpv_density(&s, vmax + 0.06, &plan).unwrap(), 0.0);
        let vmin = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(gpv_density(&s, vmin - 0.051, &plan).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_bids_share_pseudo_values() {
        let s = BidSample::new(vec![0.3, 0.3, 0.1, 0.5], 2).unwrap();
        let plan = BandwidthPlan::new(0.3, 0.1, 0.1).unwrap();
        let v = pseudo_values(&s, &plan).unwrap();
        assert_eq!(v[0], v[1]);
        assert!(v.iter().zip(s.bids()).all(|(x, b)| x >= b));
    }
}
