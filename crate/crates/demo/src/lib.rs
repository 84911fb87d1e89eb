//! Browser bindings: simulate a sample and compare the two estimators, draw
//! a bootstrap band, and evaluate the asymptotic variance ratio.
//!
//! Every exported function returns JSON text; the page parses it.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use rgpv::bootstrap::{uniform_bands, BootstrapOptions};
use rgpv::estimate::{Fit, FitOptions};
use rgpv::kernels::{BidKernelOrder, Estimator};
use rgpv::simulate::{dgp_draw, rule_of_thumb_lambda_ratio, theta_primitives, true_density};
use rgpv::variance::asymptotic_variance;

const CURVE_POINTS: usize = 200;

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn fit_for(theta: f64, n_bidders: usize, n_auctions: usize, seed: u64, h_r_scale: f64) -> rgpv::Result<Fit> {
    let (sample, _) = dgp_draw(theta, n_bidders, n_auctions, seed)?;
    let base = Fit::new(&sample, &FitOptions::default())?;
    if h_r_scale == 1.0 {
        return Ok(base);
    }
    let plan = base.plan();
    let opts = FitOptions {
        h_g: Some(plan.h_g),
        h_f: Some(plan.h_f),
        h_r: Some(plan.h_r * h_r_scale),
        riemann_m: None,
    };
    Fit::new(&sample, &opts)
}

/// Densities on a value grid plus the unconstrained inverse strategy `ξ̂(b)`
/// and the rearranged one `ŝ⁻¹(b)` on a bid grid.
pub fn compare(theta: f64, n_bidders: usize, n_auctions: usize, seed: u64, h_r_scale: f64) -> rgpv::Result<Value> {
    let fit = fit_for(theta, n_bidders, n_auctions, seed, h_r_scale)?;
    let grid = linspace(0.0, 1.0, CURVE_POINTS);
    let truth: Vec<f64> = grid.iter().map(|&v| true_density(theta, v).unwrap_or(f64::NAN)).collect();
    let curve = fit.curve();
    let stride = (curve.resolution() / CURVE_POINTS).max(1);
    let (lo, _) = curve.support();
    let bids: Vec<f64> = (1..=curve.resolution())
        .step_by(stride)
        .map(|i| lo + i as f64 * curve.step())
        .collect();
    let xi: Vec<f64> = curve.values().iter().step_by(stride).copied().collect();
    let constrained = fit.strategy().constrained_pseudo_values(&bids)?;
    Ok(json!({
        "bandwidths": fit.plan(),
        "grid": grid,
        "truth": truth,
        "gpv": fit.densities(Estimator::Gpv, &grid),
        "rgpv": fit.densities(Estimator::Rgpv, &grid),
        "bids": bids,
        "xi": xi,
        "rearranged": constrained,
    }))
}

/// Uniform band of one estimator over `[v_lo, v_hi]`.
#[allow(clippy::too_many_arguments)]
pub fn band_json(
    theta: f64,
    n_bidders: usize,
    n_auctions: usize,
    seed: u64,
    estimator: &str,
    alpha: f64,
    n_boot: usize,
    v_lo: f64,
    v_hi: f64,
) -> rgpv::Result<Value> {
    let method: Estimator = estimator.parse()?;
    let fit = fit_for(theta, n_bidders, n_auctions, seed, 1.0)?;
    let grid = linspace(v_lo, v_hi, 81);
    let opts = BootstrapOptions {
        n_boot,
        seed: seed ^ 0x5eed,
        ..BootstrapOptions::default()
    };
    let band = uniform_bands(&fit, &grid, &[method], &[alpha], &opts)?.remove(0);
    let truth: Vec<f64> = grid.iter().map(|&v| true_density(theta, v).unwrap_or(f64::NAN)).collect();
    let covered = band.covers(|v| true_density(theta, v).unwrap_or(f64::NAN));
    Ok(json!({
        "grid": band.grid,
        "estimate": band.estimate,
        "lower": band.lower,
        "upper": band.upper,
        "truth": truth,
        "critical_value": band.critical_value,
        "sup_width": band.sup_width(),
        "covers": covered,
    }))
}

/// `V_GPV / V_RGPV` on the design.
pub fn ratio(theta: f64, n_bidders: usize, rule_of_thumb: bool, fourth_order: bool) -> rgpv::Result<f64> {
    let lambda = if rule_of_thumb {
        rule_of_thumb_lambda_ratio(theta, n_bidders)
    } else {
        1.0
    };
    let kernel = if fourth_order {
        BidKernelOrder::Fourth
    } else {
        BidKernelOrder::Second
    };
    let prim = theta_primitives(theta, n_bidders, lambda, kernel)?;
    Ok(asymptotic_variance(Estimator::Gpv, &prim, 0.5)? / asymptotic_variance(Estimator::Rgpv, &prim, 0.5)?)
}

fn to_js(e: rgpv::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn estimate(theta: f64, n_bidders: usize, n_auctions: usize, seed: u32, h_r_scale: f64) -> Result<String, JsError> {
    compare(theta, n_bidders, n_auctions, seed as u64, h_r_scale)
        .map(|v| v.to_string())
        .map_err(to_js)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn band(
    theta: f64,
    n_bidders: usize,
    n_auctions: usize,
    seed: u32,
    estimator: &str,
    alpha: f64,
    n_boot: usize,
    v_lo: f64,
    v_hi: f64,
) -> Result<String, JsError> {
    band_json(theta, n_bidders, n_auctions, seed as u64, estimator, alpha, n_boot, v_lo, v_hi)
        .map(|v| v.to_string())
        .map_err(to_js)
}

#[wasm_bindgen]
pub fn variance_ratio(theta: f64, n_bidders: usize, rule_of_thumb: bool, fourth_order: bool) -> Result<f64, JsError> {
    ratio(theta, n_bidders, rule_of_thumb, fourth_order).map_err(to_js)
}
