//! Monte Carlo coverage study on the power-law design
//! `F(v) = v^θ` on `[0, 1]`, where equilibrium bidding is linear.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{replication_rng, uniform_bands, BootstrapOptions};
use crate::error::{Error, Result};
use crate::estimate::{Fit, FitOptions};
use crate::kernels::{BidKernelOrder, Estimator};
use crate::par::map_indices;
use crate::sample::{BidSample, BID_BANDWIDTH_CONSTANT, VALUE_BANDWIDTH_CONSTANT};
use crate::variance::{AsymptoticPrimitives, GpvVarianceKind};

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("theta must be positive, got {theta}")))
    }
}

/// `s'(v) = 1 - 1/(θ(N-1) + 1)`.
pub fn strategy_slope(theta: f64, n_bidders: usize) -> f64 {
    1.0 - 1.0 / (theta * (n_bidders as f64 - 1.0) + 1.0)
}

/// The linear equilibrium strategy and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearStrategy {
    pub slope: f64,
}

impl LinearStrategy {
    pub fn value(&self, v: f64) -> f64 {
        self.slope * v
    }
    pub fn d1(&self) -> f64 {
        self.slope
    }
    pub fn d2(&self) -> f64 {
        0.0
    }
    pub fn d3(&self) -> f64 {
        0.0
    }
}

pub fn true_strategy_derivs(theta: f64, n_bidders: usize) -> Result<LinearStrategy> {
    check_theta(theta)?;
    if n_bidders < 2 {
        return Err(Error::invalid("need at least two bidders"));
    }
    Ok(LinearStrategy {
        slope: strategy_slope(theta, n_bidders),
    })
}

/// `f(v) = θ v^(θ-1)` on `[0, 1]`.
pub fn true_density(theta: f64, v: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfDomain {
            what: "value",
            value: v,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(density_unchecked(theta, v))
}

fn density_unchecked(theta: f64, v: f64) -> f64 {
    if theta == 1.0 {
        1.0
    } else {
        theta * v.powf(theta - 1.0)
    }
}

/// `L` auctions of `N` bidders; returns the bids and the underlying values.
pub fn dgp_draw(theta: f64, n_bidders: usize, n_auctions: usize, seed: u64) -> Result<(BidSample, Vec<f64>)> {
    dgp_draw_with(theta, n_bidders, n_auctions, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn dgp_draw_with<R: Rng + ?Sized>(
    theta: f64,
    n_bidders: usize,
    n_auctions: usize,
    rng: &mut R,
) -> Result<(BidSample, Vec<f64>)> {
    let s = true_strategy_derivs(theta, n_bidders)?;
    let values: Vec<f64> = (0..n_bidders * n_auctions)
        .map(|_| rng.gen::<f64>().powf(1.0 / theta))
        .collect();
    let bids = values.iter().map(|&v| s.value(v)).collect();
    Ok((BidSample::new(bids, n_bidders)?, values))
}

/// `λ_f/λ_g` implied by the rule-of-thumb constants on this design, where
/// `σ_b = s' σ_v` makes the ratio `3.15 / (3.72 s')` for every sample size.
pub fn rule_of_thumb_lambda_ratio(theta: f64, n_bidders: usize) -> f64 {
    VALUE_BANDWIDTH_CONSTANT / (BID_BANDWIDTH_CONSTANT * strategy_slope(theta, n_bidders))
}

/// Population primitives of the design.
pub fn theta_primitives(theta: f64, n_bidders: usize, lambda_fg: f64, bid_kernel: BidKernelOrder) -> Result<AsymptoticPrimitives> {
    let s = true_strategy_derivs(theta, n_bidders)?;
    let k = s.slope;
    Ok(AsymptoticPrimitives {
        n_bidders,
        cdf: Box::new(move |v| v.clamp(0.0, 1.0).powf(theta)),
        density: Box::new(move |v| density_unchecked(theta, v)),
        density_d1: Box::new(move |v| theta * (theta - 1.0) * v.powf(theta - 2.0)),
        density_d2: Box::new(move |v| theta * (theta - 1.0) * (theta - 2.0) * v.powf(theta - 3.0)),
        strategy: Box::new(move |v| k * v),
        strategy_d1: Box::new(move |_| k),
        strategy_d2: Box::new(|_| 0.0),
        strategy_d3: Box::new(|_| 0.0),
        // g(b) = f(b/k)/k
        bid_density: Box::new(move |b| density_unchecked(theta, b / k) / k),
        lambda_fg,
        bid_kernel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub theta: f64,
    pub n_bidders: usize,
    pub total_bids: usize,
    pub mc_reps: usize,
    pub n_boot: usize,
    pub alphas: Vec<f64>,
    pub interval: (f64, f64),
    pub grid_step: f64,
    pub seed: u64,
    pub gpv_variance: GpvVarianceKind,
    pub fit: FitOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            n_bidders: 5,
            total_bids: 2100,
            mc_reps: 200,
            n_boot: 199,
            alphas: vec![0.05, 0.10],
            interval: (0.3, 0.7),
            grid_step: 0.001,
            seed: 20_240_601,
            gpv_variance: GpvVarianceKind::default(),
            fit: FitOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        if self.n_bidders < 2 {
            return Err(Error::invalid("need at least two bidders"));
        }
        if self.total_bids == 0 || self.total_bids % self.n_bidders != 0 {
            return Err(Error::invalid(format!(
                "total bids {} is not a positive multiple of N = {}",
                self.total_bids, self.n_bidders
            )));
        }
        if self.mc_reps == 0 {
            return Err(Error::invalid("mc_reps must be at least 1"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::invalid("alphas must be non-empty and inside (0, 1)"));
        }
        let (lo, hi) = self.interval;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid("interval must satisfy 0 < v_l < v_u < 1"));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::invalid("grid step must be positive"));
        }
        Ok(())
    }

    /// `v_l, v_l + step, …, v_u` (the last point snapped to `v_u`).
    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.interval;
        let n = ((hi - lo) / self.grid_step - 1e-9).ceil() as usize;
        (0..=n)
            .map(|i| if i == n { hi } else { lo + i as f64 * self.grid_step })
            .collect()
    }
}

/// Outcome of one band in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandOutcome {
    pub method: Estimator,
    pub alpha: f64,
    pub covered: bool,
    pub sup_width: f64,
    pub critical_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub outcomes: Vec<BandOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Estimator,
    pub alpha: f64,
    pub coverage: f64,
    pub mean_sup_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRatio {
    pub alpha: f64,
    /// Mean `W_GPV` over mean `W_RGPV`.
    pub ratio_of_means: f64,
    /// Mean of the per-replication ratios.
    pub mean_of_ratios: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<(usize, String)>,
    pub rows: Vec<CoverageRow>,
    pub width_ratios: Vec<WidthRatio>,
    #[serde(skip)]
    pub records: Vec<RepRecord>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl SimReport {
    pub fn coverage(&self, method: Estimator, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.alpha - alpha).abs() < 1e-12)
            .map(|r| r.coverage)
    }

    pub fn width_ratio(&self, alpha: f64) -> Option<&WidthRatio> {
        self.width_ratios.iter().find(|r| (r.alpha - alpha).abs() < 1e-12)
    }

    /// Plain-text table: one row per level, coverage of both bands and the
    /// supremum-width ratio.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(
            out,
            "theta={} N={} NL={} reps={} boot={} I=[{}, {}] step={}",
            c.theta, c.n_bidders, c.total_bids, self.completed, c.n_boot, c.interval.0, c.interval.1, c.grid_step
        );
        let _ = writeln!(out, "{:>8} {:>10} {:>10} {:>12} {:>12}", "level", "CB_GPV", "CB_RGPV", "W ratio", "mean ratio");
        for w in &self.width_ratios {
            let g = self.coverage(Estimator::Gpv, w.alpha).unwrap_or(f64::NAN);
            let r = self.coverage(Estimator::Rgpv, w.alpha).unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{:>8.3} {:>10.3} {:>10.3} {:>12.3} {:>12.3}",
                1.0 - w.alpha,
                g,
                r,
                w.ratio_of_means,
                w.mean_of_ratios
            );
        }
        if self.failed > 0 {
            let _ = writeln!(out, "failed replications: {}", self.failed);
        }
        let _ = writeln!(out, "runtime: {:.1}s", self.runtime_secs);
        out
    }

    /// One CSV line per replication, band and level.
    pub fn write_records_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "method", "alpha", "covered", "sup_width", "critical_value", "error"])?;
        for r in &self.records {
            if let Some(e) = &r.error {
                w.write_record([r.rep.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), e.clone()])?;
            }
            for o in &r.outcomes {
                w.write_record([
                    r.rep.to_string(),
                    o.method.to_string(),
                    o.alpha.to_string(),
                    (o.covered as u8).to_string(),
                    o.sup_width.to_string(),
                    o.critical_value.to_string(),
                    String::new(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "<records csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Runs one replication of the study.
pub fn run_replication(config: &SimConfig, rep: usize) -> Result<Vec<BandOutcome>> {
    let mut rng = replication_rng(config.seed, rep as u64);
    let n_auctions = config.total_bids / config.n_bidders;
    let (sample, _) = dgp_draw_with(config.theta, config.n_bidders, n_auctions, &mut rng)?;
    let boot_seed: u64 = rng.gen();
    let fit = Fit::new(&sample, &config.fit)?;
    let grid = config.grid();
    let opts = BootstrapOptions {
        n_boot: config.n_boot,
        seed: boot_seed,
        fit: config.fit,
        gpv_variance: config.gpv_variance,
    };
    let methods = [Estimator::Gpv, Estimator::Rgpv];
    let bands = uniform_bands(&fit, &grid, &methods, &config.alphas, &opts)?;
    let theta = config.theta;
    Ok(bands
        .iter()
        .map(|b| BandOutcome {
            method: b.method,
            alpha: b.alpha,
            covered: b.covers(|v| density_unchecked(theta, v)),
            sup_width: b.sup_width(),
            critical_value: b.critical_value,
        })
        .collect())
}

pub fn coverage_experiment(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let start = Instant::now();
    let records: Vec<RepRecord> = map_indices(config.mc_reps, |rep| match run_replication(config, rep) {
        Ok(outcomes) => RepRecord {
            rep,
            outcomes,
            error: None,
        },
        Err(e) => RepRecord {
            rep,
            outcomes: Vec::new(),
            error: Some(e.to_string()),
        },
    });
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let failures: Vec<(usize, String)> = records
        .iter()
        .filter_map(|r| r.error.clone().map(|e| (r.rep, e)))
        .collect();
    let completed = ok.len();
    let mut rows = Vec::new();
    let mut width_ratios = Vec::new();
    let find = |r: &RepRecord, m: Estimator, a: f64| -> BandOutcome {
        *r.outcomes
            .iter()
            .find(|o| o.method == m && o.alpha == a)
            .expect("every replication reports every band")
    };
    if completed > 0 {
        let n = completed as f64;
        for m in [Estimator::Gpv, Estimator::Rgpv] {
            for &a in &config.alphas {
                let outs: Vec<BandOutcome> = ok.iter().map(|r| find(r, m, a)).collect();
                rows.push(CoverageRow {
                    method: m,
                    alpha: a,
                    coverage: outs.iter().filter(|o| o.covered).count() as f64 / n,
                    mean_sup_width: outs.iter().map(|o| o.sup_width).sum::<f64>() / n,
                });
            }
        }
        for &a in &config.alphas {
            let wg: Vec<f64> = ok.iter().map(|r| find(r, Estimator::Gpv, a).sup_width).collect();
            let wr: Vec<f64> = ok.iter().map(|r| find(r, Estimator::Rgpv, a).sup_width).collect();
            width_ratios.push(WidthRatio {
                alpha: a,
                ratio_of_means: wg.iter().sum::<f64>() / wr.iter().sum::<f64>(),
                mean_of_ratios: wg.iter().zip(&wr).map(|(g, r)| g / r).sum::<f64>() / n,
            });
        }
    }
    Ok(SimReport {
        config: config.clone(),
        completed,
        failed: failures.len(),
        failures,
        rows,
        width_ratios,
        records,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_slopes() {
        assert!((strategy_slope(1.0, 5) - 0.8).abs() < 1e-15);
        assert!((strategy_slope(2.0, 3) - 0.8).abs() < 1e-15);
        assert!((strategy_slope(1.0, 3) - 2.0 / 3.0).abs() < 1e-15);
        let s = true_strategy_derivs(1.7, 4).unwrap();
        assert_eq!(s.value(0.0), 0.0);
        assert_eq!(s.d2(), 0.0);
        assert_eq!(s.d3(), 0.0);
    }

    #[test]
    fn draws_follow_the_strategy() {
        let (s, v) = dgp_draw(1.0, 5, 40, 3).unwrap();
        for (b, v) in s.bids().iter().zip(&v) {
            assert!((b - 0.8 * v).abs() < 1e-15);
        }
        let (a, _) = dgp_draw(1.0, 5, 40, 3).unwrap();
        assert_eq!(a.bids(), s.bids());
    }

    #[test]
    fn densities() {
        assert_eq!(true_density(1.0, 0.3).unwrap(), 1.0);
        assert!((true_density(2.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(true_density(1.0, 1.2).is_err());
        assert!(true_density(-1.0, 0.5).is_err());
    }

    #[test]
    fn config_checks_and_grid() {
        let c = SimConfig::default();
        c.validate().unwrap();
        let g = c.grid();
        assert_eq!(g.len(), 401);
        assert_eq!(g[400], 0.7);
        let bad = SimConfig {
            total_bids: 2101,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn smoke_run() {
        let c = SimConfig {
            total_bids: 500,
            mc_reps: 1,
            n_boot: 20,
            grid_step: 0.05,
            ..SimConfig::default()
        };
        let r = coverage_experiment(&c).unwrap();
        assert_eq!(r.completed, 1);
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.coverage) && row.mean_sup_width > 0.0));
        assert!(r.table().contains("CB_RGPV"));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("width_ratios"));
        let mut buf = Vec::new();
        r.write_records_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
