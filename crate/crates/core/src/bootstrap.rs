//! Bootstrap resampling, pointwise intervals and uniform confidence bands.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{Fit, FitOptions};
use crate::hetero::{Auction, HeteroPanel};
use crate::kernels::Estimator;
use crate::par::map_indices;
use crate::sample::{BandwidthPlan, BidSample};
use crate::variance::{variance_curve, GpvVarianceKind, VarianceInputs};

/// Generator for replication `rep` under `master`: one ChaCha stream per
/// replication, so replications are independent of scheduling order.
pub fn replication_rng(master: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng
}

/// `NL` draws with replacement from the pooled bids, reshaped to `N × L`.
pub fn resample(sample: &BidSample, seed: u64) -> BidSample {
    resample_with(sample, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn resample_with<R: Rng + ?Sized>(sample: &BidSample, rng: &mut R) -> BidSample {
    let bids = sample.bids();
    let draws = (0..bids.len()).map(|_| bids[rng.gen_range(0..bids.len())]).collect();
    BidSample::new(draws, sample.n_bidders()).expect("resample of a valid sample is valid")
}

/// Two-step draw for panels with varying bidder counts: each of the `L`
/// auctions first draws a bidder count from the observed counts, then that
/// many bids with replacement from the pooled bids of auctions of that size.
/// Covariates travel with the drawn auction.
pub fn two_step_resample(panel: &HeteroPanel, seed: u64) -> HeteroPanel {
    two_step_resample_with(panel, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn two_step_resample_with<R: Rng + ?Sized>(panel: &HeteroPanel, rng: &mut R) -> HeteroPanel {
    let auctions = panel.auctions();
    let mut pools: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for a in auctions {
        pools.entry(a.n_bidders()).or_default().extend_from_slice(&a.bids);
    }
    let drawn = (0..auctions.len())
        .map(|l| {
            let src = &auctions[rng.gen_range(0..auctions.len())];
            let pool = &pools[&src.n_bidders()];
            Auction {
                id: format!("{}", l + 1),
                covariates: src.covariates.clone(),
                bidder_ids: (1..=src.n_bidders()).map(|j| j.to_string()).collect(),
                bids: (0..src.n_bidders()).map(|_| pool[rng.gen_range(0..pool.len())]).collect(),
            }
        })
        .collect();
    HeteroPanel::new(panel.covariate_names().to_vec(), drawn).expect("resample of a valid panel is valid")
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Left-continuous `(1 - α)` quantile: the order statistic of rank
/// `⌈(1 - α) B⌉` among `B` values.
pub fn critical_value(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite bootstrap statistic".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_rank(1.0 - alpha, sorted.len()) - 1])
}

/// `⌈p B⌉`, clamped to `1..=B`, with a small guard against `p B` landing a
/// rounding error above an integer.
fn order_rank(p: f64, b: usize) -> usize {
    ((p * b as f64 - 1e-9).ceil() as usize).clamp(1, b)
}

/// Settings shared by every bootstrap procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub gpv_variance: GpvVarianceKind,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_boot: 499,
            seed: 0,
            fit: FitOptions::default(),
            gpv_variance: GpvVarianceKind::default(),
        }
    }
}

/// Point estimates, variances and standard errors `√(V̂ / (L h_f² h_g))` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Studentized {
    pub estimator: Estimator,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl Studentized {
    pub fn new(inputs: &VarianceInputs<'_>, estimator: Estimator, grid: &[f64], gpv_kind: GpvVarianceKind) -> Result<Self> {
        check_grid(inputs.fit(), grid)?;
        let fit = inputs.fit();
        let variance = variance_curve(inputs, estimator, grid, gpv_kind)?;
        let scale = se_scale(fit.sample().n_auctions(), &fit.plan());
        let std_error = variance
            .iter()
            .map(|&v| {
                if v.is_finite() && v >= 0.0 {
                    Ok((v / scale).sqrt())
                } else {
                    Err(Error::Numerical(format!("variance estimate {v} is not usable")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            estimator,
            grid: grid.to_vec(),
            estimate: fit.densities(estimator, grid),
            variance,
            std_error,
        })
    }
}

/// `L h_f² h_g`.
pub fn se_scale(n_auctions: usize, plan: &BandwidthPlan) -> f64 {
    n_auctions as f64 * plan.h_f * plan.h_f * plan.h_g
}

fn check_grid(fit: &Fit, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("grid must be finite and strictly increasing"));
    }
    let (lo, hi) = fit.strategy().bracket();
    for &v in grid {
        if v < lo || v > hi {
            return Err(Error::OutOfDomain {
                what: "grid value",
                value: v,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Re-estimates on `n_boot` resamples and returns, for every target and
/// replication, `sup_v |f̂*(v) - f̂(v)| / se(v)` with the original `se`.
pub fn sup_statistics(fit: &Fit, targets: &[&Studentized], n_boot: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let support = fit.support();
    let plan = fit.plan();
    let m = fit.curve().resolution();
    let reps: Vec<Result<Vec<f64>>> = map_indices(n_boot, |rep| {
        let star = resample_with(fit.sample(), &mut replication_rng(seed, rep as u64));
        let refit = Fit::with_plan(&star, plan, support, m)?;
        Ok(targets
            .iter()
            .map(|t| {
                t.grid
                    .iter()
                    .zip(&t.estimate)
                    .zip(&t.std_error)
                    .map(|((&v, &f), &se)| {
                        let diff = (refit.density(t.estimator, v) - f).abs();
                        if diff == 0.0 {
                            0.0
                        } else {
                            diff / se
                        }
                    })
                    .fold(0.0, f64::max)
            })
            .collect())
    });
    let mut out = vec![Vec::with_capacity(n_boot); targets.len()];
    for rep in reps {
        for (k, s) in rep?.into_iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Numerical("bootstrap sup statistic is not finite".into()));
            }
            out[k].push(s);
        }
    }
    Ok(out)
}

/// A uniform band `f̂ ± ζ se` over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub method: Estimator,
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub bandwidths: BandwidthPlan,
    pub critical_value: f64,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub variance: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BandResult {
    pub fn from_sups(stud: &Studentized, sups: &[f64], alpha: f64, seed: u64, plan: BandwidthPlan) -> Result<Self> {
        let zeta = critical_value(sups, alpha)?;
        let lower = stud.estimate.iter().zip(&stud.std_error).map(|(f, s)| f - zeta * s).collect();
        let upper = stud.estimate.iter().zip(&stud.std_error).map(|(f, s)| f + zeta * s).collect();
        Ok(Self {
            method: stud.estimator,
            alpha,
            n_boot: sups.len(),
            seed,
            bandwidths: plan,
            critical_value: zeta,
            grid: stud.grid.clone(),
            estimate: stud.estimate.clone(),
            variance: stud.variance.clone(),
            lower,
            upper,
        })
    }

    /// `W = sup_v (upper - lower)`.
    pub fn sup_width(&self) -> f64 {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .fold(0.0, f64::max)
    }

    /// Whether `truth(v)` lies inside the band at every grid point.
    pub fn covers(&self, truth: impl Fn(f64) -> f64) -> bool {
        self.grid
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| {
                let f = truth(v);
                l <= f && f <= u
            })
    }

    /// CSV with columns `v,estimate,variance,lower,upper`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["v", "estimate", "variance", "lower", "upper"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                self.grid[i].to_string(),
                self.estimate[i].to_string(),
                self.variance[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<band csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    /// Everything except the per-point columns.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "alpha": self.alpha,
            "n_boot": self.n_boot,
            "seed": self.seed,
            "critical_value": self.critical_value,
            "bandwidths": self.bandwidths,
            "sup_width": self.sup_width(),
            "grid_points": self.grid.len(),
        })
    }
}

/// Uniform bands for several estimators and levels from one set of
/// bootstrap replications. Output is ordered estimator-major.
pub fn uniform_bands(
    fit: &Fit,
    grid: &[f64],
    estimators: &[Estimator],
    alphas: &[f64],
    opts: &BootstrapOptions,
) -> Result<Vec<BandResult>> {
    for &a in alphas {
        check_alpha(a)?;
    }
    if opts.n_boot < 20 {
        return Err(Error::invalid(format!("n_boot must be at least 20, got {}", opts.n_boot)));
    }
    let inputs = VarianceInputs::new(fit);
    let studs = estimators
        .iter()
        .map(|&e| Studentized::new(&inputs, e, grid, opts.gpv_variance))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Studentized> = studs.iter().collect();
    let sups = sup_statistics(fit, &refs, opts.n_boot, opts.seed)?;
    let mut out = Vec::with_capacity(estimators.len() * alphas.len());
    for (stud, s) in studs.iter().zip(&sups) {
        for &a in alphas {
            out.push(BandResult::from_sups(stud, s, a, opts.seed, fit.plan())?);
        }
    }
    Ok(out)
}

/// Uniform band of one estimator at level `1 - alpha`.
pub fn uniform_band(
    sample: &BidSample,
    grid: &[f64],
    alpha: f64,
    estimator: Estimator,
    opts: &BootstrapOptions,
) -> Result<BandResult> {
    let fit = Fit::new(sample, &opts.fit)?;
    Ok(uniform_bands(&fit, grid, &[estimator], &[alpha], opts)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    Normal,
    Percentile,
}

/// Pointwise interval at `v`: normal `f̂ ± z se` or bootstrap percentile.
pub fn pointwise_ci(
    sample: &BidSample,
    v: f64,
    alpha: f64,
    estimator: Estimator,
    method: IntervalMethod,
    opts: &BootstrapOptions,
) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let fit = Fit::new(sample, &opts.fit)?;
    match method {
        IntervalMethod::Normal => {
            let inputs = VarianceInputs::new(&fit);
            let stud = Studentized::new(&inputs, estimator, &[v], opts.gpv_variance)?;
            let z = normal_quantile(1.0 - alpha / 2.0);
            let (f, se) = (stud.estimate[0], stud.std_error[0]);
            Ok((f - z * se, f + z * se))
        }
        IntervalMethod::Percentile => {
            if opts.n_boot < 2 {
                return Err(Error::invalid("percentile intervals need at least two replications"));
            }
            let draws = bootstrap_estimates(&fit, estimator, &[v], opts.n_boot, opts.seed)?;
            let mut vals: Vec<f64> = draws.into_iter().map(|d| d[0]).collect();
            vals.sort_by(f64::total_cmp);
            let b = vals.len();
            let lo = vals[order_rank(alpha / 2.0, b) - 1];
            let hi = vals[order_rank(1.0 - alpha / 2.0, b) - 1];
            Ok((lo, hi))
        }
    }
}

/// `f̂*` on the grid for every replication, in replication order.
pub fn bootstrap_estimates(fit: &Fit, estimator: Estimator, grid: &[f64], n_boot: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let support = fit.support();
    let plan = fit.plan();
    let m = fit.curve().resolution();
    map_indices(n_boot, |rep| {
        let star = resample_with(fit.sample(), &mut replication_rng(seed, rep as u64));
        Ok(Fit::with_plan(&star, plan, support, m)?.densities(estimator, grid))
    })
    .into_iter()
    .collect()
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}
