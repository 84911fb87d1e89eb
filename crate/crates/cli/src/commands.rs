use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use rgpv::bootstrap::{uniform_bands, BootstrapOptions, Studentized};
use rgpv::estimate::Fit;
use rgpv::hetero::{self, HeteroModel};
use rgpv::kernels::{BidKernelOrder, Estimator};
use rgpv::sample::load_bids;
use rgpv::simulate::{coverage_experiment, rule_of_thumb_lambda_ratio, strategy_slope, theta_primitives, SimConfig};
use rgpv::variance::{asymptotic_variance, VarianceInputs};

use crate::config::{sidecar, with_suffix};
use crate::error::{usage, CliError};
use crate::{BandArgs, BandwidthConstants, EstimateArgs, GridArgs, HomogenizeArgs, KernelOrder, MethodChoice, SimulateArgs, VarianceRatioArgs};

const DEFAULT_STEP: f64 = 0.001;
const MAX_GRID: usize = 1_000_000;

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    writeln!(w, "{text}")
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })
}

fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

/// `lo, lo + step, …, hi`, the last point snapped to `hi`.
fn build_grid(args: &GridArgs, values: &[f64]) -> Result<Vec<f64>, CliError> {
    let lo = args.grid_lo.unwrap_or_else(|| quantile(values, 0.3));
    let hi = args.grid_hi.unwrap_or_else(|| quantile(values, 0.7));
    let step = args.grid_step.unwrap_or(DEFAULT_STEP);
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(usage(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if !(step > 0.0) {
        return Err(usage("--grid-step must be positive"));
    }
    let n = ((hi - lo) / step - 1e-9).ceil() as usize;
    if n + 1 > MAX_GRID {
        return Err(usage(format!("grid would have {} points; increase --grid-step", n + 1)));
    }
    Ok((0..=n).map(|i| if i == n { hi } else { lo + i as f64 * step }).collect())
}

fn check_grid_inside(grid: &[f64], bracket: (f64, f64)) -> Result<(), CliError> {
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    if a < bracket.0 || b > bracket.1 {
        return Err(usage(format!(
            "grid [{a}, {b}] leaves the estimable range [{}, {}]",
            bracket.0, bracket.1
        )));
    }
    Ok(())
}

fn grid_meta(grid: &[f64]) -> serde_json::Value {
    json!({ "lo": grid[0], "hi": grid[grid.len() - 1], "points": grid.len() })
}

pub fn estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    if a.panel.unwrap_or(false) {
        return estimate_panel(a, input, output);
    }
    let sample = load_bids(input)?;
    let fit = Fit::new(&sample, &a.fit.options())?;
    let grid = build_grid(&a.grid, fit.constrained_values())?;
    check_grid_inside(&grid, fit.strategy().bracket())?;
    let inputs = VarianceInputs::new(&fit);
    let kind = a.gpv_variance.unwrap_or_default();
    let gpv = Studentized::new(&inputs, Estimator::Gpv, &grid, kind)?;
    let rgpv = Studentized::new(&inputs, Estimator::Rgpv, &grid, kind)?;
    let mut w = numeric_csv(output, &["v", "f_gpv", "f_rgpv", "var_gpv", "var_rgpv", "se_gpv", "se_rgpv"])?;
    for i in 0..grid.len() {
        w.row(&[grid[i], gpv.estimate[i], rgpv.estimate[i], gpv.variance[i], rgpv.variance[i], gpv.std_error[i], rgpv.std_error[i]])?;
    }
    w.finish()?;
    write_json(
        &sidecar(output),
        &json!({
            "command": "estimate",
            "config": a,
            "n_bids": sample.len(),
            "n_bidders": sample.n_bidders(),
            "bandwidths": fit.plan(),
            "riemann_m": fit.curve().resolution(),
            "bid_support": fit.support(),
            "gpv_variance": kind,
            "grid": grid_meta(&grid),
            "density_floor_events": fit.floor_events(),
        }),
    )
}

fn panel_model(path: &Path, x0: Option<&[f64]>, fit_args: &crate::FitArgs) -> Result<(hetero::HomogenizationFit, Vec<f64>, HeteroModel), CliError> {
    let panel = hetero::load_panel(path)?;
    let reg = hetero::fit_homogenization(&panel)?;
    let x0 = hetero::reference_point(&panel, x0);
    let homogenized = hetero::homogenize_panel(&panel, &reg, &x0)?;
    let model = HeteroModel::new(&homogenized, &fit_args.options())?;
    Ok((reg, x0, model))
}

fn estimate_panel(a: &EstimateArgs, input: &Path, output: &Path) -> Result<(), CliError> {
    let (reg, x0, model) = panel_model(input, a.x0.as_deref(), &a.fit)?;
    let values: Vec<f64> = model.groups().iter().flat_map(|g| g.fit.constrained_values().to_vec()).collect();
    let grid = build_grid(&a.grid, &values)?;
    let var = model.variance(&grid)?;
    let mut w = numeric_csv(output, &["v", "f_rgpv", "variance", "se"])?;
    for (i, &v) in grid.iter().enumerate() {
        w.row(&[v, model.density(v), var[i].total, var[i].std_error])?;
    }
    w.finish()?;
    write_json(
        &sidecar(output),
        &json!({
            "command": "estimate",
            "config": a,
            "x0": x0,
            "regression": reg,
            "total_auctions": model.total_auctions(),
            "h_f": model.value_bandwidth(),
            "h_r": model.rearrangement_bandwidth(),
            "groups": group_meta(&model),
            "grid": grid_meta(&grid),
        }),
    )
}

fn group_meta(model: &HeteroModel) -> Vec<serde_json::Value> {
    model
        .groups()
        .iter()
        .map(|g| json!({ "n": g.n, "auctions": g.n_auctions, "h_g": g.fit.plan().h_g, "bid_support": g.fit.support() }))
        .collect()
}

pub fn band(a: &BandArgs) -> Result<(), CliError> {
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    let alpha = a.alpha.unwrap_or(0.05);
    let n_boot = a.boot.unwrap_or(499);
    let seed = a.seed.unwrap_or(0);
    if a.panel.unwrap_or(false) {
        if matches!(a.method, Some(MethodChoice::Gpv | MethodChoice::Both)) {
            return Err(usage("panel bands are available for the rgpv method only"));
        }
        let (_, _, model) = panel_model(input, a.x0.as_deref(), &a.fit)?;
        let values: Vec<f64> = model.groups().iter().flat_map(|g| g.fit.constrained_values().to_vec()).collect();
        let grid = build_grid(&a.grid, &values)?;
        let panel = hetero::load_panel(input)?;
        let band = hetero::hetero_band(&panel, a.x0.as_deref(), &grid, alpha, n_boot, seed, &a.fit.options())?;
        let mut w = create(output)?;
        band.write_csv(&mut w)?;
        flush(&mut w, output)?;
        let groups_path = with_suffix(output, "groups");
        let mut g = create(&groups_path)?;
        band.write_groups_csv(&mut g)?;
        flush(&mut g, &groups_path)?;
        let meta = json!({
            "command": "band",
            "config": a,
            "alpha": band.alpha,
            "n_boot": band.n_boot,
            "seed": band.seed,
            "x0": band.x0,
            "regression": band.fit,
            "h_f": band.h_f,
            "h_r": band.h_r,
            "critical_value": band.critical_value,
            "groups": band.groups,
            "grid": grid_meta(&grid),
        });
        return write_json(&sidecar(output), &meta);
    }
    let sample = load_bids(input)?;
    let fit = Fit::new(&sample, &a.fit.options())?;
    let grid = build_grid(&a.grid, fit.constrained_values())?;
    check_grid_inside(&grid, fit.strategy().bracket())?;
    let methods: Vec<Estimator> = match a.method.unwrap_or(MethodChoice::Rgpv) {
        MethodChoice::Gpv => vec![Estimator::Gpv],
        MethodChoice::Rgpv => vec![Estimator::Rgpv],
        MethodChoice::Both => vec![Estimator::Gpv, Estimator::Rgpv],
    };
    let opts = BootstrapOptions {
        n_boot,
        seed,
        fit: a.fit.options(),
        gpv_variance: a.gpv_variance.unwrap_or_default(),
    };
    let bands = uniform_bands(&fit, &grid, &methods, &[alpha], &opts)?;
    let mut meta = Vec::new();
    for b in &bands {
        let path = if bands.len() == 1 {
            output.to_path_buf()
        } else {
            with_suffix(output, b.method.name())
        };
        let mut w = create(&path)?;
        b.write_csv(&mut w)?;
        flush(&mut w, &path)?;
        let mut m = b.metadata();
        m["csv"] = json!(path.file_name().and_then(|n| n.to_str()));
        meta.push(m);
    }
    write_json(
        &sidecar(output),
        &json!({
            "command": "band",
            "config": a,
            "n_bids": sample.len(),
            "n_bidders": sample.n_bidders(),
            "riemann_m": fit.curve().resolution(),
            "bid_support": fit.support(),
            "gpv_variance": opts.gpv_variance,
            "grid": grid_meta(&grid),
            "bands": meta,
        }),
    )
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let d = SimConfig::default();
    let config = SimConfig {
        theta: a.theta.unwrap_or(d.theta),
        n_bidders: a.n_bidders.unwrap_or(d.n_bidders),
        total_bids: a.total_bids.unwrap_or(d.total_bids),
        mc_reps: a.reps.unwrap_or(d.mc_reps),
        n_boot: a.boot.unwrap_or(d.n_boot),
        alphas: a.alphas.clone().unwrap_or(d.alphas),
        interval: (a.interval_lo.unwrap_or(d.interval.0), a.interval_hi.unwrap_or(d.interval.1)),
        grid_step: a.grid_step.unwrap_or(d.grid_step),
        seed: a.seed.unwrap_or(d.seed),
        gpv_variance: a.gpv_variance.unwrap_or(d.gpv_variance),
        fit: a.fit.options(),
    };
    let report = coverage_experiment(&config)?;
    print!("{}", report.table());
    if let Some(path) = &a.output {
        write_json(path, &report)?;
    }
    if let Some(path) = &a.records {
        let mut w = create(path)?;
        report.write_records_csv(&mut w)?;
        flush(&mut w, path)?;
    }
    Ok(())
}

pub fn homogenize(a: &HomogenizeArgs) -> Result<(), CliError> {
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    let panel = hetero::load_panel(input)?;
    let reg = hetero::fit_homogenization(&panel)?;
    let x0 = hetero::reference_point(&panel, a.x0.as_deref());
    let homogenized = hetero::homogenize_panel(&panel, &reg, &x0)?;
    let mut w = create(output)?;
    hetero::write_homogenized(&panel, &homogenized, &mut w)?;
    flush(&mut w, output)?;
    write_json(
        &sidecar(output),
        &json!({
            "command": "homogenize",
            "config": a,
            "covariates": panel.covariate_names(),
            "x0": x0,
            "regression": reg,
            "auctions_by_n": panel.bidder_counts(),
        }),
    )
}

#[derive(Serialize)]
struct RatioRow {
    theta: f64,
    n_bidders: usize,
    lambda_ratio: f64,
    slope_factor: f64,
    variance_gpv: f64,
    variance_rgpv: f64,
    ratio: f64,
}

pub fn variance_ratio(a: &VarianceRatioArgs) -> Result<(), CliError> {
    let thetas = a.theta.clone().unwrap_or_else(|| vec![1.0]);
    let ns = a.n_bidders.clone().unwrap_or_else(|| vec![5]);
    let constants = a.bandwidths.unwrap_or(BandwidthConstants::Equal);
    let kernel = match a.bid_kernel.unwrap_or(KernelOrder::Second) {
        KernelOrder::Second => BidKernelOrder::Second,
        KernelOrder::Fourth => BidKernelOrder::Fourth,
    };
    let v = a.v.unwrap_or(0.5);
    let mut rows = Vec::new();
    for &theta in &thetas {
        for &n in &ns {
            let lambda = match constants {
                BandwidthConstants::Equal => 1.0,
                BandwidthConstants::RuleOfThumb => rule_of_thumb_lambda_ratio(theta, n),
            };
            let prim = theta_primitives(theta, n, lambda, kernel)?;
            let g = asymptotic_variance(Estimator::Gpv, &prim, v)?;
            let r = asymptotic_variance(Estimator::Rgpv, &prim, v)?;
            rows.push(RatioRow {
                theta,
                n_bidders: n,
                lambda_ratio: lambda,
                slope_factor: strategy_slope(theta, n) * lambda,
                variance_gpv: g,
                variance_rgpv: r,
                ratio: g / r,
            });
        }
    }
    println!("{:>8} {:>4} {:>10} {:>10}", "theta", "N", "c", "ratio");
    for r in &rows {
        println!("{:>8} {:>4} {:>10.4} {:>10.4}", r.theta, r.n_bidders, r.slope_factor, r.ratio);
    }
    if let Some(path) = &a.output {
        write_json(path, &json!({ "command": "variance-ratio", "config": a, "rows": rows }))?;
    }
    Ok(())
}

fn flush(w: &mut impl Write, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Numeric CSV writer with a fixed header.
struct NumericCsv {
    path: PathBuf,
    inner: BufWriter<File>,
}

fn numeric_csv(path: &Path, header: &[&str]) -> Result<NumericCsv, CliError> {
    let mut w = NumericCsv {
        path: path.to_path_buf(),
        inner: create(path)?,
    };
    let line = header.join(",");
    w.line(&line)?;
    Ok(w)
}

impl NumericCsv {
    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.inner, "{s}").map_err(|source| CliError::Write {
            path: self.path.clone(),
            source,
        })
    }

    fn row(&mut self, xs: &[f64]) -> Result<(), CliError> {
        let s: Vec<String> = xs.iter().map(f64::to_string).collect();
        self.line(&s.join(","))
    }

    fn finish(mut self) -> Result<(), CliError> {
        let path = self.path.clone();
        flush(&mut self.inner, &path)
    }
}
