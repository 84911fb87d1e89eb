//! Variance estimation for the value-density estimators.
//!
//! The sample variance of the rearranged estimator is a third-order
//! U-statistic over distinct index triples,
//!
//! ```text
//! V̂(v) = P Σ_{il} Σ_{jk≠il} Σ_{j'k'∉{il,jk}} η_{il,jk}(v) η_{il,j'k'}(v),
//! P    = 1 / (N (N-1)² h_f² h_g) · 1 / (n (n-1) (n-2)),   n = NL,
//! ```
//!
//! evaluated as `P Σ_il (S_il² - Q_il)` with `S_il = Σ_{jk≠il} η_{il,jk}` and
//! `Q_il = Σ_{jk≠il} η_{il,jk}²`. Each `η_{il,jk}(v)` factors into a
//! `v`-dependent weight of `jk` times a `v`-free integral over bids, so the
//! whole evaluation grid reduces to a few dense matrix products.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::boundary::DENSITY_FLOOR;
use crate::error::{Error, Result};
use crate::estimate::Fit;
use crate::kernels::{
    asymptotic_kernel_constant, asymptotic_kernel_constant_with, poly_eval, triweight, triweight_deriv,
    BidKernelOrder, Estimator, TRIWEIGHT_MU2,
};
use crate::quadrature::GaussLegendre;
use crate::strategy::BidDistribution;

const NODES_PER_PANEL: usize = 8;
/// Panels per shortest kernel window in bid units.
const PANELS_PER_WINDOW: f64 = 8.0;
const MAX_PANELS: usize = 4000;

/// Read-only state shared by every variance evaluation on one fitted sample.
#[derive(Debug, Clone)]
pub struct VarianceInputs<'a> {
    fit: &'a Fit,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `Ĝ(u)/ĝ(u)²` at the nodes.
    ratio: Vec<f64>,
    /// `ξ̂(u)` at the nodes.
    xi: Vec<f64>,
    /// Boundary-aware `K_g` coefficients at the nodes.
    kg: Vec<[f64; 9]>,
    /// `ŝ'(V̂†_jk)`.
    slope: Vec<f64>,
    /// `Ĝ(B_jk)/ĝ(B_jk)²` and the `K_g` coefficients at `B_jk`.
    bid_ratio: Vec<f64>,
    bid_kg: Vec<[f64; 9]>,
}

impl<'a> VarianceInputs<'a> {
    pub fn new(fit: &'a Fit) -> Self {
        let (lo, hi) = fit.support();
        let plan = fit.plan();
        let (xmin, xmax) = (fit.curve().xi_min(), fit.curve().xi_max());
        // The r-kernel window in bid units is 2 h_r / ξ̂'.
        let inv_slope = if xmax > xmin { (hi - lo) / (xmax - xmin) } else { 1.0 };
        let window = plan.h_g.min(plan.h_r * inv_slope).max(f64::MIN_POSITIVE);
        let panels = (((hi - lo) / window * PANELS_PER_WINDOW).ceil() as usize).clamp(1, MAX_PANELS);
        Self::with_panels(fit, panels)
    }

    /// Same as [`Self::new`] with an explicit number of composite panels.
    pub fn with_panels(fit: &'a Fit, panels: usize) -> Self {
        let (lo, hi) = fit.support();
        let rule = GaussLegendre::new(NODES_PER_PANEL);
        let (nodes, weights): (Vec<f64>, Vec<f64>) = if hi > lo {
            rule.composite(lo, hi, panels.max(1)).into_iter().unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let bids = fit.bids();
        let n = fit.sample().n_bidders();
        let mut ratio = Vec::with_capacity(nodes.len());
        let mut xi = Vec::with_capacity(nodes.len());
        let mut kg = Vec::with_capacity(nodes.len());
        for &u in &nodes {
            let g = bids.density(u);
            let cdf = bids.cdf(u);
            ratio.push(cdf / (g * g));
            xi.push(u + cdf / ((n - 1) as f64 * g));
            kg.push(bids.bid_density().kernel_coeffs_at(u));
        }
        let strategy = fit.strategy();
        let slope = fit
            .constrained_values()
            .iter()
            .map(|&v| strategy.deriv(v))
            .collect();
        let (bid_ratio, bid_kg) = fit
            .sample()
            .bids()
            .iter()
            .map(|&b| {
                let g = bids.density(b);
                (bids.cdf(b) / (g * g), bids.bid_density().kernel_coeffs_at(b))
            })
            .unzip();
        Self {
            fit,
            nodes,
            weights,
            ratio,
            xi,
            kg,
            slope,
            bid_ratio,
            bid_kg,
        }
    }

    pub fn fit(&self) -> &Fit {
        self.fit
    }

    pub fn quadrature_len(&self) -> usize {
        self.nodes.len()
    }

    fn prefactor(&self) -> Result<f64> {
        let s = self.fit.sample();
        let nl = s.len();
        if nl < 3 {
            return Err(Error::InsufficientSample { needed: 3, got: nl });
        }
        let n = s.n_bidders() as f64;
        let p = self.fit.plan();
        let nl = nl as f64;
        Ok(1.0 / (n * (n - 1.0).powi(2) * p.h_f * p.h_f * p.h_g) / (nl * (nl - 1.0) * (nl - 2.0)))
    }

    /// `K_g` centred at node `q`, evaluated at bid `b`.
    #[inline]
    fn bid_kernel(&self, q: usize, b: f64) -> f64 {
        let z = (b - self.nodes[q]) / self.fit.plan().h_g;
        if z.abs() > 1.0 {
            0.0
        } else {
            poly_eval(&self.kg[q], z)
        }
    }

    /// `(1/h_r) K((V̂†_jk - ξ̂(u_q))/h_r) Ĝ(u_q)/ĝ(u_q)²`, without the weight.
    #[inline]
    fn value_kernel(&self, q: usize, jk: usize) -> f64 {
        let h_r = self.fit.plan().h_r;
        let z = (self.fit.constrained_values()[jk] - self.xi[q]) / h_r;
        if z.abs() >= 1.0 {
            0.0
        } else {
            triweight(z) / h_r * self.ratio[q]
        }
    }

    /// `K'((V̂†_jk - v)/h_f) / ŝ'(V̂†_jk)`.
    fn rgpv_weight(&self, jk: usize, v: f64) -> f64 {
        let z = (self.fit.constrained_values()[jk] - v) / self.fit.plan().h_f;
        if z.abs() >= 1.0 {
            return 0.0;
        }
        let s = self.slope[jk];
        if s > 0.0 {
            triweight_deriv(z) / s
        } else {
            0.0
        }
    }

    /// `K'((V̂_jk - v)/h_f)` with the unconstrained pseudo-value.
    fn gpv_weight(&self, jk: usize, v: f64) -> f64 {
        let z = (self.fit.unconstrained_values()[jk] - v) / self.fit.plan().h_f;
        triweight_deriv(z)
    }

    /// The `v`-free bid integral of `η_{il,jk}`.
    pub fn integral(&self, il: usize, jk: usize) -> f64 {
        let b = self.fit.sample().bids()[il];
        (0..self.nodes.len())
            .map(|q| self.weights[q] * self.value_kernel(q, jk) * self.bid_kernel(q, b))
            .sum()
    }

    /// `η_{il,jk}(v)` of the rearranged estimator, computed term by term.
    pub fn eta(&self, il: usize, jk: usize, v: f64) -> f64 {
        let w = self.rgpv_weight(jk, v);
        if w == 0.0 {
            0.0
        } else {
            w * self.integral(il, jk)
        }
    }

    /// `η_{il,jk}(v)` of the unconstrained estimator: the small-`h_r` limit of
    /// [`Self::eta`], where the bid integral collapses onto `u = B_jk`.
    pub fn gpv_eta(&self, il: usize, jk: usize, v: f64) -> f64 {
        let w = self.gpv_weight(jk, v);
        if w == 0.0 {
            0.0
        } else {
            w * self.gpv_kernel(il, jk)
        }
    }

    fn gpv_kernel(&self, il: usize, jk: usize) -> f64 {
        let sample = self.fit.sample().bids();
        let z = (sample[il] - sample[jk]) / self.fit.plan().h_g;
        if z.abs() > 1.0 {
            return 0.0;
        }
        self.bid_ratio[jk] * poly_eval(&self.bid_kg[jk], z)
    }

    /// `I[il, j]` for every bid and active column `j`, plus `I[il, il]`.
    fn integral_matrix(&self, active: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.fit.sample().len();
        let q = self.nodes.len();
        // C[il, q] = K_g((B_il - u_q)/h_g), A[jk, q] = w_q (1/h_r) K_r(..) Ĝ/ĝ²
        let bids = self.fit.sample().bids();
        let c = DMatrix::from_fn(n, q, |il, k| self.bid_kernel(k, bids[il]));
        let a = DMatrix::from_fn(active.len(), q, |j, k| self.weights[k] * self.value_kernel(k, active[j]));
        let integrals = &c * a.transpose();
        let diag = (0..n).map(|il| c.row(il).dot(&self.full_row_a(il))).collect();
        (integrals, diag)
    }

    /// Factorized `V̂_RGPV` on a grid of values.
    pub fn rgpv_variance_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let pref = self.prefactor()?;
        let active = active_columns(self.fit.constrained_values(), grid, self.fit.plan().h_f);
        let (integrals, diag) = self.integral_matrix(&active);
        let weights = DMatrix::from_fn(active.len(), grid.len(), |j, g| self.rgpv_weight(active[j], grid[g]));
        Ok(factorized(pref, &integrals, &active, &diag, &weights, grid.len(), |il, g| {
            self.rgpv_weight(il, grid[g])
        }))
    }

    /// Auction-level variant for samples pooled across bidder counts: the
    /// triple runs over distinct auctions `(l, k, k')`, `η_{il,k}` averages
    /// over the bidders of auction `k`, and the outer sum averages over the
    /// bidders of auction `l`. The sample must hold one bidder count `n`;
    /// `total_auctions` is the pooled `L` of the prefactor
    /// `1/(n (n-1)² h_f² h_g) · 1/(L (L-1) (L-2))`.
    pub fn auction_variance_grid(&self, grid: &[f64], total_auctions: usize) -> Result<Vec<f64>> {
        let sample = self.fit.sample();
        let n = sample.n_bidders();
        if sample.n_auctions() < 3 {
            return Err(Error::InsufficientSample {
                needed: 3,
                got: sample.n_auctions(),
            });
        }
        if total_auctions < sample.n_auctions() {
            return Err(Error::invalid("pooled auction count is below the group's"));
        }
        let p = self.fit.plan();
        let nf = n as f64;
        let l = total_auctions as f64;
        let pref = 1.0 / (nf * (nf - 1.0).powi(2) * p.h_f * p.h_f * p.h_g) / (l * (l - 1.0) * (l - 2.0));
        let active = active_columns(self.fit.constrained_values(), grid, p.h_f);
        let (integrals, _) = self.integral_matrix(&active);
        Ok(grid
            .iter()
            .map(|&v| {
                let w: Vec<f64> = active.iter().map(|&jk| self.rgpv_weight(jk, v)).collect();
                pref * auction_sum(&integrals, &active, &w, n, n)
            })
            .collect())
    }

    fn full_row_a(&self, jk: usize) -> nalgebra::RowDVector<f64> {
        nalgebra::RowDVector::from_fn(self.nodes.len(), |_, k| self.weights[k] * self.value_kernel(k, jk))
    }

    pub fn rgpv_variance(&self, v: f64) -> Result<f64> {
        Ok(self.rgpv_variance_grid(&[v])?[0])
    }

    /// Sample-analogue variance of the unconstrained estimator, built from
    /// [`Self::gpv_eta`] with the same prefactor and factorization.
    pub fn gpv_sample_variance_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let pref = self.prefactor()?;
        let n = self.fit.sample().len();
        let h_f = self.fit.plan().h_f;
        let active = active_columns(self.fit.unconstrained_values(), grid, h_f);
        let kernels = DMatrix::from_fn(n, active.len(), |il, j| self.gpv_kernel(il, active[j]));
        let diag: Vec<f64> = (0..n).map(|il| self.gpv_kernel(il, il)).collect();
        let weights = DMatrix::from_fn(active.len(), grid.len(), |j, g| self.gpv_weight(active[j], grid[g]));
        Ok(factorized(pref, &kernels, &active, &diag, &weights, grid.len(), |il, g| {
            self.gpv_weight(il, grid[g])
        }))
    }

    /// Plug-in of the asymptotic GPV variance at `v`:
    /// `Ĝ(ŝ(v))² f̂(v)² / ĝ(ŝ(v))³ · C_gpv(ŝ'(v) h_f/h_g) / (N (N-1)²)`,
    /// with `f̂` the rearranged estimate.
    pub fn gpv_plugin_variance(&self, v: f64) -> Result<PluginVariance> {
        let fit = self.fit;
        let strategy = fit.strategy();
        let plan = fit.plan();
        let b = strategy.eval(v);
        let slope = strategy.deriv(v);
        if !(slope > 0.0) {
            return Err(Error::OutOfDomain {
                what: "value",
                value: v,
                lo: strategy.bracket().0,
                hi: strategy.bracket().1,
            });
        }
        let raw_g = fit.bids().bid_density().density(b)?;
        let floored = raw_g < DENSITY_FLOOR;
        let g = raw_g.max(DENSITY_FLOOR);
        let cdf = fit.bids().cdf(b);
        let f = fit.density(Estimator::Rgpv, v);
        let n = fit.sample().n_bidders() as f64;
        let constant = asymptotic_kernel_constant(Estimator::Gpv, slope * plan.h_f / plan.h_g)?;
        Ok(PluginVariance {
            value: cdf * cdf * f * f / g.powi(3) * constant / (n * (n - 1.0).powi(2)),
            floored,
        })
    }
}

/// A plug-in variance and whether the bid density had to be floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluginVariance {
    pub value: f64,
    pub floored: bool,
}

/// Indices whose value lies within `h` of some grid point.
fn active_columns(values: &[f64], grid: &[f64], h: f64) -> Vec<usize> {
    let (gmin, gmax) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    values
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > gmin - h && x < gmax + h)
        .map(|(i, _)| i)
        .collect()
}

/// `P Σ_il (S_il² - Q_il)` per grid column, where `η = M[il, j] · W[j, g]`
/// over active columns `j`, with the `jk = il` terms removed.
fn factorized(
    pref: f64,
    m: &DMatrix<f64>,
    active: &[usize],
    diag: &[f64],
    weights: &DMatrix<f64>,
    n_grid: usize,
    own_weight: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let n = m.nrows();
    if active.is_empty() {
        return vec![0.0; n_grid];
    }
    let s = m * weights;
    let q = m.component_mul(m) * weights.component_mul(weights);
    (0..n_grid)
        .map(|g| {
            let mut total = 0.0;
            for il in 0..n {
                let own = diag[il] * own_weight(il, g);
                let si = s[(il, g)] - own;
                let qi = q[(il, g)] - own * own;
                total += si * si - qi;
            }
            pref * total
        })
        .collect()
}

/// Which estimate of the unconstrained variance to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GpvVarianceKind {
    /// Plug-in of the asymptotic formula.
    #[default]
    PlugIn,
    /// U-statistic built from [`VarianceInputs::gpv_eta`].
    SampleAnalogue,
}

impl std::str::FromStr for GpvVarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plug-in" | "plugin" => Ok(Self::PlugIn),
            "sample-analogue" | "sample" => Ok(Self::SampleAnalogue),
            other => Err(Error::invalid(format!("unknown variance estimator '{other}'"))),
        }
    }
}

/// Variance estimates of `estimator` over `grid`.
pub fn variance_curve(
    inputs: &VarianceInputs<'_>,
    estimator: Estimator,
    grid: &[f64],
    gpv_kind: GpvVarianceKind,
) -> Result<Vec<f64>> {
    match (estimator, gpv_kind) {
        (Estimator::Rgpv, _) => inputs.rgpv_variance_grid(grid),
        (Estimator::Gpv, GpvVarianceKind::SampleAnalogue) => inputs.gpv_sample_variance_grid(grid),
        (Estimator::Gpv, GpvVarianceKind::PlugIn) => grid
            .iter()
            .map(|&v| inputs.gpv_plugin_variance(v).map(|p| p.value))
            .collect(),
    }
}

/// `Σ_l (1/N) Σ_{i∈l} (S_il² - Q_il)` where `η_{il,k} = (1/N_k) Σ_{j∈k} M[il, j] w_j`
/// and `S`, `Q` run over auctions `k ≠ l`. Rows and active columns are
/// auction-major with `row_group` and `col_group` bids per auction.
pub(crate) fn auction_sum(m: &DMatrix<f64>, active: &[usize], w: &[f64], row_group: usize, col_group: usize) -> f64 {
    let mut total = 0.0;
    let col_scale = 1.0 / col_group as f64;
    let mut per_auction: Vec<(usize, f64)> = Vec::new();
    for il in 0..m.nrows() {
        let own = il / row_group;
        per_auction.clear();
        for (j, &jk) in active.iter().enumerate() {
            if w[j] == 0.0 {
                continue;
            }
            let k = jk / col_group;
            let x = m[(il, j)] * w[j] * col_scale;
            match per_auction.last_mut() {
                Some((kk, acc)) if *kk == k => *acc += x,
                _ => per_auction.push((k, x)),
            }
        }
        let (mut s, mut q) = (0.0, 0.0);
        for &(k, eta) in &per_auction {
            if k != own {
                s += eta;
                q += eta * eta;
            }
        }
        total += (s * s - q) / row_group as f64;
    }
    total
}

/// `V̂_RGPV(v)` at one point.
pub fn rgpv_variance_hat(inputs: &VarianceInputs<'_>, v: f64) -> Result<f64> {
    inputs.rgpv_variance(v)
}

/// `V̂_GPV(v)` by the plug-in rule.
pub fn gpv_variance_hat(inputs: &VarianceInputs<'_>, v: f64) -> Result<PluginVariance> {
    inputs.gpv_plugin_variance(v)
}

pub type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Population objects entering the asymptotic variance and bias.
pub struct AsymptoticPrimitives {
    pub n_bidders: usize,
    /// Value CDF `F`.
    pub cdf: ScalarFn,
    /// Value density `f` and its first two derivatives.
    pub density: ScalarFn,
    pub density_d1: ScalarFn,
    pub density_d2: ScalarFn,
    /// Bidding strategy `s` and its first three derivatives.
    pub strategy: ScalarFn,
    pub strategy_d1: ScalarFn,
    pub strategy_d2: ScalarFn,
    pub strategy_d3: ScalarFn,
    /// Bid density `g`.
    pub bid_density: ScalarFn,
    /// `λ_f / λ_g`.
    pub lambda_fg: f64,
    /// Kernel standing in for the bid-density estimator.
    pub bid_kernel: BidKernelOrder,
}

impl std::fmt::Debug for AsymptoticPrimitives {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsymptoticPrimitives")
            .field("n_bidders", &self.n_bidders)
            .field("lambda_fg", &self.lambda_fg)
            .field("bid_kernel", &self.bid_kernel)
            .finish_non_exhaustive()
    }
}

/// `F(v)² f(v)² / g(s(v))³ · C(s'(v) λ_f/λ_g) / (N (N-1)²)`.
pub fn asymptotic_variance(kind: Estimator, prim: &AsymptoticPrimitives, v: f64) -> Result<f64> {
    if prim.n_bidders < 2 {
        return Err(Error::invalid("need at least two bidders"));
    }
    let g = (prim.bid_density)((prim.strategy)(v));
    if !(g > 0.0) {
        return Err(Error::Numerical(format!("bid density at s({v}) is not positive: {g}")));
    }
    let c = (prim.strategy_d1)(v) * prim.lambda_fg;
    let constant = asymptotic_kernel_constant_with(kind, c, prim.bid_kernel, 32)?;
    let n = prim.n_bidders as f64;
    let (cdf, f) = ((prim.cdf)(v), (prim.density)(v));
    Ok(cdf * cdf * f * f / g.powi(3) * constant / (n * (n - 1.0).powi(2)))
}

/// Leading bias `ι(v)` of the rearranged estimator.
pub fn asymptotic_bias(prim: &AsymptoticPrimitives, v: f64, h_f: f64, h_r: f64) -> f64 {
    let f = (prim.density)(v);
    let f1 = (prim.density_d1)(v);
    let f2 = (prim.density_d2)(v);
    let s1 = (prim.strategy_d1)(v);
    let s2 = (prim.strategy_d2)(v);
    let s3 = (prim.strategy_d3)(v);
    let smoothing = 0.5 * f2 * TRIWEIGHT_MU2 * h_f * h_f;
    let rearrangement = 0.5 * ((s3 * f + s2 * f1) * s1 - s2 * s2 * f) / (s1 * s1) * TRIWEIGHT_MU2 * h_r * h_r;
    smoothing + rearrangement
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::FitOptions;
    use crate::sample::BidSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(nl: usize, n: usize, seed: u64) -> BidSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = 1.0 - 1.0 / n as f64;
        BidSample::new((0..nl).map(|_| f * rng.gen::<f64>()).collect(), n).unwrap()
    }

    fn small_fit(nl: usize, n: usize, seed: u64) -> Fit {
        let s = sample(nl, n, seed);
        let opts = FitOptions {
            h_g: Some(0.3),
            h_f: Some(0.3),
            h_r: Some(0.3),
            riemann_m: Some(500),
        };
        Fit::new(&s, &opts).unwrap()
    }

    /// Triple sum and the matching absolute mass, including the squared
    /// terms the factorization subtracts.
    fn brute(inputs: &VarianceInputs<'_>, v: f64, gpv: bool) -> (f64, f64) {
        let fit = inputs.fit();
        let n = fit.sample().len();
        let eta = |a, b| if gpv { inputs.gpv_eta(a, b, v) } else { inputs.eta(a, b, v) };
        let (mut total, mut mass) = (0.0, 0.0);
        for il in 0..n {
            for jk in 0..n {
                if jk != il {
                    mass += eta(il, jk).powi(2);
                }
                for jk2 in 0..n {
                    if jk != il && jk2 != il && jk2 != jk {
                        let t = eta(il, jk) * eta(il, jk2);
                        total += t;
                        mass += t.abs();
                    }
                }
            }
        }
        let p = inputs.prefactor().unwrap();
        (total * p, mass * p)
    }

    #[test]
    fn factorization_matches_triple_enumeration() {
        for seed in 0..4 {
            let fit = small_fit(8, 2, seed);
            let inputs = VarianceInputs::new(&fit);
            let grid = [0.2, 0.45, 0.6];
            let fast = inputs.rgpv_variance_grid(&grid).unwrap();
            let fast_gpv = inputs.gpv_sample_variance_grid(&grid).unwrap();
            for (g, &v) in grid.iter().enumerate() {
                let (slow, mass) = brute(&inputs, v, false);
                assert!((fast[g] - slow).abs() <= 1e-10 * mass, "{} vs {slow}", fast[g]);
                let (slow, mass) = brute(&inputs, v, true);
                assert!((fast_gpv[g] - slow).abs() <= 1e-10 * mass, "{} vs {slow}", fast_gpv[g]);
            }
        }
    }

    #[test]
    fn auction_sum_with_singleton_auctions_is_the_bid_level_sum() {
        let fit = small_fit(9, 3, 5);
        let inputs = VarianceInputs::new(&fit);
        let grid = [0.3, 0.5];
        let active = active_columns(fit.constrained_values(), &grid, fit.plan().h_f);
        let (m, diag) = inputs.integral_matrix(&active);
        let weights = DMatrix::from_fn(active.len(), grid.len(), |j, g| inputs.rgpv_weight(active[j], grid[g]));
        let bid_level = factorized(1.0, &m, &active, &diag, &weights, grid.len(), |il, g| {
            inputs.rgpv_weight(il, grid[g])
        });
        for (g, &v) in grid.iter().enumerate() {
            let w: Vec<f64> = active.iter().map(|&jk| inputs.rgpv_weight(jk, v)).collect();
            let grouped = auction_sum(&m, &active, &w, 1, 1);
            assert!((grouped - bid_level[g]).abs() < 1e-12 * bid_level[g].abs().max(1e-12));
        }
    }

    #[test]
    fn auction_variance_matches_triple_enumeration() {
        let fit = small_fit(12, 2, 8);
        let inputs = VarianceInputs::new(&fit);
        let n = 2;
        let l_total = 9;
        let p = fit.plan();
        let pref = 1.0 / (2.0 * p.h_f * p.h_f * p.h_g) / (9.0 * 8.0 * 7.0);
        for v in [0.25, 0.5] {
            let eta_k = |il: usize, k: usize| -> f64 {
                (0..n).map(|j| inputs.eta(il, k * n + j, v)).sum::<f64>() / n as f64
            };
            let auctions = fit.sample().n_auctions();
            let (mut total, mut mass) = (0.0, 0.0);
            for l in 0..auctions {
                for i in 0..n {
                    let il = l * n + i;
                    for k in (0..auctions).filter(|&k| k != l) {
                        mass += eta_k(il, k).powi(2) / n as f64;
                        for k2 in (0..auctions).filter(|&k2| k2 != l && k2 != k) {
                            let t = eta_k(il, k) * eta_k(il, k2) / n as f64;
                            total += t;
                            mass += t.abs();
                        }
                    }
                }
            }
            let fast = inputs.auction_variance_grid(&[v], l_total).unwrap()[0];
            assert!((fast - pref * total).abs() <= 1e-10 * pref * mass, "{fast} vs {}", pref * total);
        }
    }

    #[test]
    fn far_values_give_zero() {
        let fit = small_fit(9, 3, 1);
        let inputs = VarianceInputs::new(&fit);
        assert_eq!(inputs.rgpv_variance(25.0).unwrap(), 0.0);
    }

    #[test]
    fn needs_three_bids() {
        let s = BidSample::new(vec![0.1, 0.4], 2).unwrap();
        let opts = FitOptions {
            h_g: Some(0.3),
            h_f: Some(0.3),
            h_r: Some(0.3),
            riemann_m: Some(200),
        };
        let fit = Fit::new(&s, &opts).unwrap();
        let inputs = VarianceInputs::new(&fit);
        assert!(matches!(inputs.rgpv_variance(0.3), Err(Error::InsufficientSample { .. })));
    }

    #[test]
    fn eta_integral_matches_direct_quadrature() {
        let fit = small_fit(10, 2, 3);
        let coarse = VarianceInputs::with_panels(&fit, 400);
        let fine = VarianceInputs::with_panels(&fit, 1600);
        for il in 0..4 {
            for jk in 0..4 {
                let a = coarse.integral(il, jk);
                let b = fine.integral(il, jk);
                assert!((a - b).abs() < 2e-3 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }
}
