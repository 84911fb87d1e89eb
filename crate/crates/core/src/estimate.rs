//! One-shot estimation pipeline: bid distribution, inverse strategy,
//! rearrangement and both value densities, sharing a single bandwidth plan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Estimator;
use crate::rearrange::{default_resolution, RearrangedStrategy};
use crate::sample::{bandwidth_plan, bid_bandwidth, BandwidthPlan, BidSample};
use crate::strategy::{pseudo_values_with, InverseBidCurve, KernelBids, ValueDensity};

/// Optional overrides; anything left `None` follows the rule of thumb.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub h_g: Option<f64>,
    pub h_f: Option<f64>,
    pub h_r: Option<f64>,
    /// Riemann resolution `M` of the rearrangement.
    pub riemann_m: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Fit {
    sample: BidSample,
    plan: BandwidthPlan,
    bids: KernelBids,
    curve: InverseBidCurve,
    strategy: RearrangedStrategy,
    unconstrained: Vec<f64>,
    constrained: Vec<f64>,
    gpv: ValueDensity,
    rgpv: ValueDensity,
}

impl Fit {
    pub fn new(sample: &BidSample, opts: &FitOptions) -> Result<Self> {
        let h_g = match opts.h_g {
            Some(h) => h,
            None => bid_bandwidth(sample)?,
        };
        let bids = KernelBids::from_sample(sample, h_g)?;
        let plan = match (opts.h_f, opts.h_r) {
            (Some(h_f), Some(h_r)) => BandwidthPlan::new(h_g, h_f, h_r)?,
            _ => {
                let values = pseudo_values_with(&bids, sample.n_bidders(), sample.bids());
                let rot = bandwidth_plan(sample, &values)?;
                BandwidthPlan::new(h_g, opts.h_f.unwrap_or(rot.h_f), opts.h_r.unwrap_or(rot.h_r))?
            }
        };
        let m = opts.riemann_m.unwrap_or_else(|| default_resolution(sample.len()));
        Self::assemble(sample.clone(), plan, bids, m, None)
    }

    /// Re-estimation with everything but the data held fixed: used for
    /// bootstrap replications, which keep the original support and plan.
    pub fn with_plan(sample: &BidSample, plan: BandwidthPlan, support: (f64, f64), m: usize) -> Result<Self> {
        let bids = KernelBids::new(sample.bids(), support.0, support.1, plan.h_g)?;
        Self::assemble(sample.clone(), plan, bids, m, None)
    }

    /// Like [`Self::with_plan`], but the bid CDF, bid density and both value
    /// densities divide by `norm` instead of the number of bids.
    pub fn with_normalizer(
        sample: &BidSample,
        plan: BandwidthPlan,
        support: (f64, f64),
        m: usize,
        norm: f64,
    ) -> Result<Self> {
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid(format!("normalizer must be positive, got {norm}")));
        }
        let bids = KernelBids::new(sample.bids(), support.0, support.1, plan.h_g)?.with_normalizer(norm);
        Self::assemble(sample.clone(), plan, bids, m, Some(norm))
    }

    fn assemble(sample: BidSample, plan: BandwidthPlan, bids: KernelBids, m: usize, norm: Option<f64>) -> Result<Self> {
        let n = sample.n_bidders();
        let curve = InverseBidCurve::build(&bids, n, m)?;
        let strategy = RearrangedStrategy::new(&curve, plan.h_r)?;
        let unconstrained = pseudo_values_with(&bids, n, sample.bids());
        if unconstrained.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite pseudo-value".into()));
        }
        let constrained = strategy.constrained_pseudo_values(sample.bids())?;
        let mut gpv = ValueDensity::new(&unconstrained, plan.h_f)?;
        let mut rgpv = ValueDensity::new(&constrained, plan.h_f)?;
        if let Some(norm) = norm {
            gpv = gpv.with_normalizer(norm);
            rgpv = rgpv.with_normalizer(norm);
        }
        Ok(Self {
            sample,
            plan,
            bids,
            curve,
            strategy,
            unconstrained,
            constrained,
            gpv,
            rgpv,
        })
    }

    pub fn sample(&self) -> &BidSample {
        &self.sample
    }

    pub fn plan(&self) -> BandwidthPlan {
        self.plan
    }

    pub fn bids(&self) -> &KernelBids {
        &self.bids
    }

    pub fn support(&self) -> (f64, f64) {
        self.curve.support()
    }

    pub fn curve(&self) -> &InverseBidCurve {
        &self.curve
    }

    pub fn strategy(&self) -> &RearrangedStrategy {
        &self.strategy
    }

    /// `ξ̂(B_il)`, aligned with the sample.
    pub fn unconstrained_values(&self) -> &[f64] {
        &self.unconstrained
    }

    /// `ŝ⁻¹(B_il)`, aligned with the sample.
    pub fn constrained_values(&self) -> &[f64] {
        &self.constrained
    }

    pub fn density(&self, estimator: Estimator, v: f64) -> f64 {
        match estimator {
            Estimator::Gpv => self.gpv.density(v),
            Estimator::Rgpv => self.rgpv.density(v),
        }
    }

    pub fn densities(&self, estimator: Estimator, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&v| self.density(estimator, v)).collect()
    }

    /// Number of times the bid density was floored so far.
    pub fn floor_events(&self) -> usize {
        self.bids.floor_events()
    }
}

/// `f̂_RGPV(v)` from an already rearranged strategy.
pub fn rgpv_density(sample: &BidSample, v: f64, plan: &BandwidthPlan, strategy: &RearrangedStrategy) -> Result<f64> {
    let values = strategy.constrained_pseudo_values(sample.bids())?;
    Ok(ValueDensity::new(&values, plan.h_f)?.density(v))
}
