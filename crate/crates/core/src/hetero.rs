//! Auctions with covariates and varying numbers of bidders.
//!
//! Log bids are regressed on bidder-count indicators and covariates; bids are
//! then rescaled to a reference covariate vector `x0` and the rearranged
//! estimator is run separately for every bidder count, with densities and
//! distribution functions normalized by the total number of auctions.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{critical_value, replication_rng};
use crate::error::{Error, Result};
use crate::estimate::{Fit, FitOptions};
use crate::kernels::Estimator;
use crate::par::map_indices;
use crate::rearrange::default_resolution;
use crate::sample::{bid_bandwidth, id_cmp, parse_number, value_bandwidth, BandwidthPlan, BidSample, SortKey};
use crate::strategy::{pseudo_values_with, KernelBids};
use crate::variance::VarianceInputs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Auction {
    pub id: String,
    pub covariates: Vec<f64>,
    pub bidder_ids: Vec<String>,
    pub bids: Vec<f64>,
}

impl Auction {
    pub fn n_bidders(&self) -> usize {
        self.bids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroPanel {
    covariate_names: Vec<String>,
    auctions: Vec<Auction>,
}

impl HeteroPanel {
    pub fn new(covariate_names: Vec<String>, auctions: Vec<Auction>) -> Result<Self> {
        if auctions.is_empty() {
            return Err(Error::EmptyInput);
        }
        let d = covariate_names.len();
        for a in &auctions {
            if a.bids.len() < 2 {
                return Err(Error::invalid(format!("auction {} has fewer than two bidders", a.id)));
            }
            if a.bidder_ids.len() != a.bids.len() {
                return Err(Error::invalid(format!("auction {}: bidder ids and bids differ in length", a.id)));
            }
            if a.covariates.len() != d {
                return Err(Error::invalid(format!(
                    "auction {} has {} covariates, expected {d}",
                    a.id,
                    a.covariates.len()
                )));
            }
            if a.covariates.iter().chain(&a.bids).any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("auction {} has non-finite entries", a.id)));
            }
        }
        Ok(Self {
            covariate_names,
            auctions,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn auctions(&self) -> &[Auction] {
        &self.auctions
    }

    pub fn n_auctions(&self) -> usize {
        self.auctions.len()
    }

    pub fn n_bids(&self) -> usize {
        self.auctions.iter().map(Auction::n_bidders).sum()
    }

    /// Observed bidder counts with the number of auctions for each.
    pub fn bidder_counts(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for a in &self.auctions {
            *out.entry(a.n_bidders()).or_insert(0) += 1;
        }
        out
    }

    /// `L⁻¹ Σ_l X_l`.
    pub fn mean_covariates(&self) -> Vec<f64> {
        let d = self.covariate_names.len();
        let mut m = vec![0.0; d];
        for a in &self.auctions {
            for (acc, x) in m.iter_mut().zip(&a.covariates) {
                *acc += x;
            }
        }
        m.iter_mut().for_each(|x| *x /= self.auctions.len() as f64);
        m
    }

    /// Bids of every auction with `n` bidders, auction-major.
    pub fn group(&self, n: usize) -> Option<BidSample> {
        let bids: Vec<f64> = self
            .auctions
            .iter()
            .filter(|a| a.n_bidders() == n)
            .flat_map(|a| a.bids.iter().copied())
            .collect();
        if bids.is_empty() {
            None
        } else {
            BidSample::new(bids, n).ok()
        }
    }

    /// Per-bidder-count samples.
    pub fn groups(&self) -> BTreeMap<usize, BidSample> {
        self.bidder_counts()
            .keys()
            .filter_map(|&n| self.group(n).map(|s| (n, s)))
            .collect()
    }
}

const FIXED_COLUMNS: [&str; 4] = ["auction_id", "bidder_id", "bid", "n_bidders"];

/// Reads `auction_id,bidder_id,bid,n_bidders,x1..xd`; every further column
/// is a covariate. Auctions and bidders are sorted by id.
pub fn read_panel<R: std::io::Read>(reader: R) -> Result<HeteroPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut idx = [0usize; 4];
    for (k, col) in FIXED_COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))?;
    }
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !FIXED_COLUMNS.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    struct Raw {
        n: usize,
        x: Vec<f64>,
        rows: Vec<(String, f64)>,
    }
    let mut raw: BTreeMap<SortKey, Raw> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bid = parse_number(field(idx[2]), line, "bid")?;
        let n_raw = parse_number(field(idx[3]), line, "n_bidders")?;
        if n_raw.fract() != 0.0 || n_raw < 2.0 {
            return Err(Error::NonNumeric {
                line,
                column: "n_bidders".into(),
                raw: field(idx[3]).to_string(),
            });
        }
        let x = cov_cols
            .iter()
            .map(|(c, name)| parse_number(field(*c), line, name))
            .collect::<Result<Vec<_>>>()?;
        let id = field(idx[0]).to_string();
        let entry = raw.entry(SortKey(id.clone())).or_insert_with(|| Raw {
            n: n_raw as usize,
            x: x.clone(),
            rows: Vec::new(),
        });
        if entry.n != n_raw as usize || entry.x != x {
            return Err(Error::invalid(format!(
                "line {line}: auction {id} changes its bidder count or covariates"
            )));
        }
        entry.rows.push((field(idx[1]).to_string(), bid));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut auctions = Vec::with_capacity(raw.len());
    for (id, mut r) in raw {
        if r.rows.len() != r.n {
            return Err(Error::RaggedPanel {
                auction: id.0,
                expected: r.n,
                found: r.rows.len(),
            });
        }
        r.rows.sort_by(|a, b| id_cmp(&a.0, &b.0));
        let (bidder_ids, bids) = r.rows.into_iter().unzip();
        auctions.push(Auction {
            id: id.0,
            covariates: r.x,
            bidder_ids,
            bids,
        });
    }
    HeteroPanel::new(cov_cols.into_iter().map(|(_, n)| n).collect(), auctions)
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<HeteroPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_panel(file)
}

/// `log B = Σ_n α_n 1(N = n) + X'β + U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationFit {
    pub alpha_by_n: BTreeMap<usize, f64>,
    pub beta: Vec<f64>,
}

impl HomogenizationFit {
    /// `x'β`.
    pub fn index(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// `log B - α_N - X'β`, in panel order.
    pub fn residuals(&self, panel: &HeteroPanel) -> Vec<f64> {
        panel
            .auctions()
            .iter()
            .flat_map(|a| {
                let fitted = self.alpha_by_n.get(&a.n_bidders()).copied().unwrap_or(f64::NAN) + self.index(&a.covariates);
                a.bids.iter().map(move |b| b.ln() - fitted)
            })
            .collect()
    }
}

/// Design rows (dummies then covariates) in panel order.
fn design(panel: &HeteroPanel, counts: &[usize]) -> DMatrix<f64> {
    let d = panel.covariate_names().len();
    let cols = counts.len() + d;
    let rows = panel.n_bids();
    let mut x = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for a in panel.auctions() {
        let dummy = counts.iter().position(|&n| n == a.n_bidders()).expect("observed count");
        for _ in &a.bids {
            x[(r, dummy)] = 1.0;
            for (k, &v) in a.covariates.iter().enumerate() {
                x[(r, counts.len() + k)] = v;
            }
            r += 1;
        }
    }
    x
}

/// Least squares through a Householder QR with an explicit rank check.
pub fn fit_homogenization(panel: &HeteroPanel) -> Result<HomogenizationFit> {
    let counts: Vec<usize> = panel.bidder_counts().into_keys().collect();
    let mut y = Vec::with_capacity(panel.n_bids());
    for a in panel.auctions() {
        for &b in &a.bids {
            if !(b > 0.0) {
                return Err(Error::NonPositiveBid(b));
            }
            y.push(b.ln());
        }
    }
    let x = design(panel, &counts);
    let cols = x.ncols();
    if x.nrows() < cols {
        return Err(Error::RankDeficient {
            rank: x.nrows(),
            cols,
        });
    }
    let rows = x.nrows();
    let qr = x.qr();
    let r = qr.r();
    let scale = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-10 * (rows as f64).sqrt();
    let rank = (0..cols).filter(|&i| r[(i, i)].abs() > tol).count();
    if rank < cols || scale == 0.0 {
        return Err(Error::RankDeficient { rank, cols });
    }
    let qty = qr.q().transpose() * DVector::from_vec(y);
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(HomogenizationFit {
        alpha_by_n: counts.iter().enumerate().map(|(k, &n)| (n, coef[k])).collect(),
        beta: coef.iter().skip(counts.len()).copied().collect(),
    })
}

/// The panel with bids replaced by `B⁰ = exp(log B + x0'β̂ - X'β̂)` and
/// covariates set to `x0`.
pub fn homogenize_panel(panel: &HeteroPanel, fit: &HomogenizationFit, x0: &[f64]) -> Result<HeteroPanel> {
    if x0.len() != fit.beta.len() {
        return Err(Error::invalid(format!(
            "x0 has {} entries, the fit has {} covariates",
            x0.len(),
            fit.beta.len()
        )));
    }
    let target = fit.index(x0);
    let auctions = panel
        .auctions()
        .iter()
        .map(|a| {
            let shift = target - fit.index(&a.covariates);
            Auction {
                id: a.id.clone(),
                covariates: x0.to_vec(),
                bidder_ids: a.bidder_ids.clone(),
                bids: a.bids.iter().map(|b| b * shift.exp()).collect(),
            }
        })
        .collect();
    HeteroPanel::new(panel.covariate_names().to_vec(), auctions)
}

/// Homogenized bids grouped by bidder count.
pub fn homogenize(panel: &HeteroPanel, fit: &HomogenizationFit, x0: &[f64]) -> Result<BTreeMap<usize, BidSample>> {
    Ok(homogenize_panel(panel, fit, x0)?.groups())
}

/// `auction_id,bidder_id,n_bidders,bid,homogenized_bid`.
pub fn write_homogenized<W: std::io::Write>(panel: &HeteroPanel, homogenized: &HeteroPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["auction_id", "bidder_id", "n_bidders", "bid", "homogenized_bid"])?;
    for (a, h) in panel.auctions().iter().zip(homogenized.auctions()) {
        for i in 0..a.bids.len() {
            w.write_record([
                a.id.clone(),
                a.bidder_ids[i].clone(),
                a.n_bidders().to_string(),
                a.bids[i].to_string(),
                h.bids[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<homogenized csv>".into(),
        source,
    })?;
    Ok(())
}

/// One bidder-count group of a [`HeteroModel`].
#[derive(Debug, Clone)]
pub struct GroupFit {
    pub n: usize,
    pub n_auctions: usize,
    pub fit: Fit,
}

/// Per-`n` rearranged estimators on homogenized bids.
#[derive(Debug, Clone)]
pub struct HeteroModel {
    total_auctions: usize,
    h_f: f64,
    h_r: f64,
    riemann_m: usize,
    groups: Vec<GroupFit>,
}

impl HeteroModel {
    /// `h_g` follows the rule of thumb inside each group; `h_f = h_r` is set
    /// once from all unconstrained pseudo-values. Overrides in `opts` apply
    /// to every group.
    pub fn new(homogenized: &HeteroPanel, opts: &FitOptions) -> Result<Self> {
        let groups = homogenized.groups();
        let total_auctions = homogenized.n_auctions();
        let mut h_g = BTreeMap::new();
        let mut pooled = Vec::new();
        for (&n, s) in &groups {
            if s.len() < 3 {
                return Err(Error::InsufficientSample { needed: 3, got: s.len() });
            }
            let h = match opts.h_g {
                Some(h) => h,
                None => bid_bandwidth(s)?,
            };
            if opts.h_f.is_none() || opts.h_r.is_none() {
                let bids = KernelBids::from_sample(s, h)?;
                pooled.extend(pseudo_values_with(&bids, n, s.bids()));
            }
            h_g.insert(n, h);
        }
        let rot = if pooled.is_empty() { None } else { Some(value_bandwidth(&pooled)?) };
        let h_f = opts.h_f.or(rot).expect("pooled values exist when h_f is not given");
        let h_r = opts.h_r.or(rot).expect("pooled values exist when h_r is not given");
        let riemann_m = opts.riemann_m.unwrap_or_else(|| default_resolution(homogenized.n_bids()));
        let fits = groups
            .iter()
            .map(|(&n, s)| {
                let plan = BandwidthPlan::new(h_g[&n], h_f, h_r)?;
                let fit = Fit::with_normalizer(s, plan, s.support_bounds(), riemann_m, (total_auctions * n) as f64)?;
                Ok(GroupFit {
                    n,
                    n_auctions: s.n_auctions(),
                    fit,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            total_auctions,
            h_f,
            h_r,
            riemann_m,
            groups: fits,
        })
    }

    pub fn groups(&self) -> &[GroupFit] {
        &self.groups
    }

    pub fn total_auctions(&self) -> usize {
        self.total_auctions
    }

    pub fn value_bandwidth(&self) -> f64 {
        self.h_f
    }

    pub fn rearrangement_bandwidth(&self) -> f64 {
        self.h_r
    }

    /// `f̂(v | x0) = L⁻¹ Σ_l N_l⁻¹ Σ_i K_f((V̂⁰†_il - v)/h_f)/h_f`.
    pub fn density(&self, v: f64) -> f64 {
        self.groups.iter().map(|g| g.fit.density(Estimator::Rgpv, v)).sum()
    }

    pub fn densities(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&v| self.density(v)).collect()
    }

    /// Variance on a grid: per group the auction-level U-statistic; groups
    /// with fewer than three auctions are flagged and left out.
    pub fn variance(&self, grid: &[f64]) -> Result<Vec<HeteroVariance>> {
        let mut per_group = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let h_g = g.fit.plan().h_g;
            let values = if g.n_auctions < 3 {
                Err(format!("{} auction(s) with {} bidders; at least 3 needed", g.n_auctions, g.n))
            } else {
                Ok(VarianceInputs::new(&g.fit).auction_variance_grid(grid, self.total_auctions)?)
            };
            per_group.push((g.n, h_g, values));
        }
        let l = self.total_auctions as f64;
        Ok((0..grid.len())
            .map(|k| {
                let mut total = 0.0;
                let mut se2 = 0.0;
                let per_n = per_group
                    .iter()
                    .map(|(n, h_g, vals)| match vals {
                        Ok(v) => {
                            total += v[k];
                            se2 += v[k] / (l * self.h_f * self.h_f * h_g);
                            GroupVariance {
                                n: *n,
                                h_g: *h_g,
                                value: Some(v[k]),
                                flag: None,
                            }
                        }
                        Err(msg) => GroupVariance {
                            n: *n,
                            h_g: *h_g,
                            value: None,
                            flag: Some(msg.clone()),
                        },
                    })
                    .collect();
                HeteroVariance {
                    total,
                    std_error: se2.max(0.0).sqrt(),
                    per_n,
                }
            })
            .collect())
    }

    /// Re-estimation on a resampled homogenized panel with every bandwidth,
    /// support and normalizer held at the original values.
    fn refit_density(&self, panel: &HeteroPanel, grid: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; grid.len()];
        for g in &self.groups {
            let Some(s) = panel.group(g.n) else { continue };
            let fit = Fit::with_normalizer(
                &s,
                g.fit.plan(),
                g.fit.support(),
                self.riemann_m,
                (self.total_auctions * g.n) as f64,
            )?;
            for (o, &v) in out.iter_mut().zip(grid) {
                *o += fit.density(Estimator::Rgpv, v);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVariance {
    pub n: usize,
    pub h_g: f64,
    pub value: Option<f64>,
    pub flag: Option<String>,
}

/// Summed variance, `se = √(Σ_n V̂_n / (L h_f² h_{g,n}))` and the per-`n` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroVariance {
    pub total: f64,
    pub std_error: f64,
    pub per_n: Vec<GroupVariance>,
}

/// `x0`, or the covariate mean when absent.
pub fn reference_point(panel: &HeteroPanel, x0: Option<&[f64]>) -> Vec<f64> {
    x0.map(<[f64]>::to_vec).unwrap_or_else(|| panel.mean_covariates())
}

/// `f̂(v | x0)` from raw data.
pub fn conditional_density(
    panel: &HeteroPanel,
    fit: &HomogenizationFit,
    x0: &[f64],
    v: f64,
    opts: &FitOptions,
) -> Result<f64> {
    let homogenized = homogenize_panel(panel, fit, x0)?;
    Ok(HeteroModel::new(&homogenized, opts)?.density(v))
}

pub fn hetero_variance_hat(
    panel: &HeteroPanel,
    fit: &HomogenizationFit,
    x0: &[f64],
    v: f64,
    opts: &FitOptions,
) -> Result<HeteroVariance> {
    let homogenized = homogenize_panel(panel, fit, x0)?;
    Ok(HeteroModel::new(&homogenized, opts)?.variance(&[v])?.remove(0))
}

/// Uniform band for `f(· | x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroBand {
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub fit: HomogenizationFit,
    pub h_f: f64,
    pub h_r: f64,
    pub critical_value: f64,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub groups: Vec<GroupSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub auctions: usize,
    pub h_g: f64,
    pub support: (f64, f64),
    pub flag: Option<String>,
}

impl HeteroBand {
    /// Same columns as the fixed-`N` band CSV.
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
        w.flush().map_err(|source| Error::Io {
            path: "<band csv>".into(),
            source,
        })?;
        Ok(())
    }

    /// `n,auctions,h_g,b_lo,b_hi,flag`.
    pub fn write_groups_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "auctions", "h_g", "b_lo", "b_hi", "flag"])?;
        for g in &self.groups {
            w.write_record([
                g.n.to_string(),
                g.auctions.to_string(),
                g.h_g.to_string(),
                g.support.0.to_string(),
                g.support.1.to_string(),
                g.flag.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<groups csv>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Band over `grid` at level `1 - alpha`, calibrated by two-step resampling
/// of the homogenized panel. The regression is fitted once.
pub fn hetero_band(
    panel: &HeteroPanel,
    x0: Option<&[f64]>,
    grid: &[f64],
    alpha: f64,
    n_boot: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<HeteroBand> {
    if n_boot < 20 {
        return Err(Error::invalid(format!("n_boot must be at least 20, got {n_boot}")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("grid must be non-empty and strictly increasing"));
    }
    let fit = fit_homogenization(panel)?;
    let x0 = reference_point(panel, x0);
    let homogenized = homogenize_panel(panel, &fit, &x0)?;
    let model = HeteroModel::new(&homogenized, opts)?;
    let estimate = model.densities(grid);
    let variances = model.variance(grid)?;
    let std_error: Vec<f64> = variances.iter().map(|v| v.std_error).collect();
    let sups: Vec<Result<f64>> = map_indices(n_boot, |rep| {
        let star = crate::bootstrap::two_step_resample_with(&homogenized, &mut replication_rng(seed, rep as u64));
        let f_star = model.refit_density(&star, grid)?;
        Ok(f_star
            .iter()
            .zip(&estimate)
            .zip(&std_error)
            .map(|((a, b), se)| {
                let d = (a - b).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / se
                }
            })
            .fold(0.0, f64::max))
    });
    let sups = sups.into_iter().collect::<Result<Vec<_>>>()?;
    let zeta = critical_value(&sups, alpha)?;
    let groups = model
        .groups()
        .iter()
        .map(|g| GroupSummary {
            n: g.n,
            auctions: g.n_auctions,
            h_g: g.fit.plan().h_g,
            support: g.fit.support(),
            flag: variances
                .first()
                .and_then(|v| v.per_n.iter().find(|p| p.n == g.n))
                .and_then(|p| p.flag.clone()),
        })
        .collect();
    Ok(HeteroBand {
        alpha,
        n_boot,
        seed,
        x0,
        fit,
        h_f: model.value_bandwidth(),
        h_r: model.rearrangement_bandwidth(),
        critical_value: zeta,
        grid: grid.to_vec(),
        lower: estimate.iter().zip(&std_error).map(|(f, s)| f - zeta * s).collect(),
        upper: estimate.iter().zip(&std_error).map(|(f, s)| f + zeta * s).collect(),
        estimate,
        variance: variances.iter().map(|v| v.total).collect(),
        std_error,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `V = exp(X'β) ε`, ε uniform, equilibrium bids scaled per `N`.
    pub(crate) fn synthetic_panel(l: usize, beta: &[f64], counts: &[usize], seed: u64) -> HeteroPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = (1..=beta.len()).map(|k| format!("x{k}")).collect();
        let auctions = (0..l)
            .map(|i| {
                let n = counts[i % counts.len()];
                let x: Vec<f64> = (0..beta.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
                let scale = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
                let slope = 1.0 - 1.0 / n as f64;
                Auction {
                    id: format!("{i}"),
                    covariates: x,
                    bidder_ids: (1..=n).map(|j| j.to_string()).collect(),
                    bids: (0..n).map(|_| scale * slope * rng.gen::<f64>().max(1e-6)).collect(),
                }
            })
            .collect();
        HeteroPanel::new(names, auctions).unwrap()
    }

    #[test]
    fn exact_recovery_on_noiseless_data() {
        let beta = [0.7, -1.3];
        let alpha = BTreeMap::from([(2usize, 0.25), (3, -0.4), (4, 1.1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let auctions = (0..30)
            .map(|i| {
                let n = 2 + i % 3;
                let x = vec![rng.gen::<f64>(), rng.gen::<f64>() * 3.0];
                let lb = alpha[&n] + x[0] * beta[0] + x[1] * beta[1];
                Auction {
                    id: i.to_string(),
                    covariates: x,
                    bidder_ids: (0..n).map(|j| j.to_string()).collect(),
                    bids: vec![lb.exp(); n],
                }
            })
            .collect();
        let panel = HeteroPanel::new(vec!["a".into(), "b".into()], auctions).unwrap();
        let fit = fit_homogenization(&panel).unwrap();
        for (k, b) in beta.iter().enumerate() {
            assert!((fit.beta[k] - b).abs() < 1e-10);
        }
        for (n, a) in &alpha {
            assert!((fit.alpha_by_n[n] - a).abs() < 1e-10);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_the_design() {
        let panel = synthetic_panel(60, &[0.5, 0.2], &[2, 3], 4);
        let fit = fit_homogenization(&panel).unwrap();
        let res = fit.residuals(&panel);
        let counts: Vec<usize> = panel.bidder_counts().into_keys().collect();
        let x = design(&panel, &counts);
        for c in 0..x.ncols() {
            let dot: f64 = (0..x.nrows()).map(|r| x[(r, c)] * res[r]).sum();
            let norm: f64 = (0..x.nrows()).map(|r| x[(r, c)].abs()).sum::<f64>();
            assert!(dot.abs() < 1e-8 * norm.max(1.0), "column {c}: {dot}");
        }
    }

    #[test]
    fn degenerate_designs() {
        let mut panel = synthetic_panel(10, &[0.5], &[2], 2);
        let auctions: Vec<Auction> = panel
            .auctions()
            .iter()
            .map(|a| Auction {
                covariates: vec![0.0],
                ..a.clone()
            })
            .collect();
        let zeroed = HeteroPanel::new(panel.covariate_names().to_vec(), auctions).unwrap();
        assert!(matches!(fit_homogenization(&zeroed), Err(Error::RankDeficient { .. })));
        panel.auctions[0].bids[0] = -1.0;
        assert!(matches!(fit_homogenization(&panel), Err(Error::NonPositiveBid(_))));
    }

    #[test]
    fn homogenization_identities() {
        let panel = synthetic_panel(20, &[0.5, -0.3], &[2, 3], 5);
        let fit = fit_homogenization(&panel).unwrap();
        // x0 = X_l leaves auction l unchanged
        for a in panel.auctions().iter().take(3) {
            let h = homogenize_panel(&panel, &fit, &a.covariates).unwrap();
            let same = h.auctions().iter().find(|b| b.id == a.id).unwrap();
            for (x, y) in same.bids.iter().zip(&a.bids) {
                assert!((x - y).abs() <= 1e-14 * y.abs());
            }
        }
        // zero coefficients leave every bid unchanged
        let zero = HomogenizationFit {
            alpha_by_n: fit.alpha_by_n.clone(),
            beta: vec![0.0, 0.0],
        };
        let h = homogenize_panel(&panel, &zero, &[3.0, 1.0]).unwrap();
        for (a, b) in h.auctions().iter().zip(panel.auctions()) {
            assert_eq!(a.bids, b.bids);
        }
        // shifting x0 by δ scales every bid by exp(δ'β)
        let x0 = panel.mean_covariates();
        let shifted: Vec<f64> = x0.iter().map(|x| x + 0.2).collect();
        let factor = (0.2 * (fit.beta[0] + fit.beta[1])).exp();
        let a = homogenize_panel(&panel, &fit, &x0).unwrap();
        let b = homogenize_panel(&panel, &fit, &shifted).unwrap();
        for (p, q) in a.auctions().iter().zip(b.auctions()) {
            for (x, y) in p.bids.iter().zip(&q.bids) {
                assert!((y - factor * x).abs() < 1e-12 * y.abs());
            }
        }
        // groups partition the bids
        let groups = homogenize(&panel, &fit, &x0).unwrap();
        assert_eq!(groups.values().map(BidSample::len).sum::<usize>(), panel.n_bids());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let csv = "auction_id,bidder_id,bid,n_bidders,size\n2,1,0.5,2,1.5\n1,2,0.1,3,0.2\n1,1,0.3,3,0.2\n2,2,0.4,2,1.5\n1,3,0.2,3,0.2\n";
        let p = read_panel(csv.as_bytes()).unwrap();
        assert_eq!(p.n_auctions(), 2);
        assert_eq!(p.covariate_names(), &["size".to_string()]);
        assert_eq!(p.auctions()[0].bids, vec![0.3, 0.1, 0.2]);
        assert_eq!(p.bidder_counts(), BTreeMap::from([(2, 1), (3, 1)]));
        let ragged = "auction_id,bidder_id,bid,n_bidders\n1,1,0.3,3\n1,2,0.1,3\n";
        assert!(matches!(read_panel(ragged.as_bytes()), Err(Error::RaggedPanel { .. })));
        let missing = "auction_id,bidder_id,bid\n1,1,0.3\n";
        assert!(matches!(read_panel(missing.as_bytes()), Err(Error::MissingColumn(_))));
        let bad = "auction_id,bidder_id,bid,n_bidders\n1,1,abc,2\n1,2,0.1,2\n";
        assert!(matches!(read_panel(bad.as_bytes()), Err(Error::NonNumeric { .. })));
    }

    #[test]
    fn single_count_reduces_to_the_fixed_n_estimator() {
        let panel = synthetic_panel(200, &[0.4], &[4], 6);
        let fit = fit_homogenization(&panel).unwrap();
        let x0 = panel.mean_covariates();
        let homogenized = homogenize_panel(&panel, &fit, &x0).unwrap();
        let model = HeteroModel::new(&homogenized, &FitOptions::default()).unwrap();
        let sample = homogenized.group(4).unwrap();
        let g = &model.groups()[0];
        let plain = Fit::with_plan(&sample, g.fit.plan(), sample.support_bounds(), default_resolution(800)).unwrap();
        for v in [0.3, 0.6, 0.9] {
            let a = model.density(v);
            let b = plain.density(Estimator::Rgpv, v);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pipeline_composition() {
        let panel = synthetic_panel(90, &[0.6], &[2, 3], 7);
        let fit = fit_homogenization(&panel).unwrap();
        let x0 = [0.1];
        let opts = FitOptions::default();
        let direct = conditional_density(&panel, &fit, &x0, 0.5, &opts).unwrap();
        let homogenized = homogenize_panel(&panel, &fit, &x0).unwrap();
        let again = conditional_density(&homogenized, &fit, &x0, 0.5, &opts).unwrap();
        assert!((direct - again).abs() < 1e-12);
    }

    #[test]
    fn too_few_auctions_are_flagged() {
        let mut panel = synthetic_panel(40, &[0.3], &[3], 8);
        let extra = Auction {
            id: "extra".into(),
            covariates: vec![0.0],
            bidder_ids: vec!["1".into(), "2".into(), "3".into(), "4".into()],
            bids: vec![0.2, 0.4, 0.5, 0.6],
        };
        panel.auctions.push(extra);
        let fit = fit_homogenization(&panel).unwrap();
        let v = hetero_variance_hat(&panel, &fit, &[0.0], 0.5, &FitOptions::default()).unwrap();
        let four = v.per_n.iter().find(|p| p.n == 4).unwrap();
        assert!(four.value.is_none() && four.flag.is_some());
        let three = v.per_n.iter().find(|p| p.n == 3).unwrap();
        assert!(three.value.is_some());
    }

    #[test]
    fn band_is_well_formed_and_reproducible() {
        let panel = synthetic_panel(120, &[0.5], &[2, 3], 9);
        let grid = [0.3, 0.4, 0.5, 0.6];
        let a = hetero_band(&panel, None, &grid, 0.1, 20, 3, &FitOptions::default()).unwrap();
        let b = hetero_band(&panel, None, &grid, 0.1, 20, 3, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.critical_value > 0.0);
        for i in 0..grid.len() {
            assert!(a.lower[i] <= a.estimate[i] && a.estimate[i] <= a.upper[i]);
        }
        assert_eq!(a.groups.len(), 2);
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), grid.len() + 1);
    }
}
