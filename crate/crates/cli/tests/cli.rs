use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgpv::sample::write_bids;
use rgpv::simulate::dgp_draw;

fn rgpv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgpv")).args(args).output().expect("binary runs")
}

fn bids_file(dir: &Path) -> PathBuf {
    let (sample, _) = dgp_draw(1.0, 5, 120, 3).unwrap();
    let path = dir.join("bids.csv");
    write_bids(&sample, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn panel_file(dir: &Path) -> PathBuf {
    let mut text = String::from("auction_id,bidder_id,bid,n_bidders,x\n");
    for n in [2usize, 3] {
        let (sample, _) = dgp_draw(1.0, n, 45, n as u64).unwrap();
        for l in 0..45 {
            let x = (l as f64 / 45.0) - 0.5;
            for (i, b) in sample.auction(l).iter().enumerate() {
                let bid = (0.5 * x).exp() * b.max(1e-4);
                text.push_str(&format!("{n}-{l},{i},{bid},{n},{x}\n"));
            }
        }
    }
    let path = dir.join("panel.csv");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn variance_ratio_prints_the_reference_value() {
    let out = rgpv(&["variance-ratio", "--theta", "1", "--n", "5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ratio: f64 = text.lines().nth(1).unwrap().split_whitespace().last().unwrap().parse().unwrap();
    assert!((ratio - 1.587).abs() < 0.01, "{text}");
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    assert_eq!(rgpv(&["estimate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(rgpv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rgpv(&["estimate", "--output", "x.csv"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("o.csv");
    assert_eq!(rgpv(&["estimate", "--input", s(&missing), "--output", s(&out)]).status.code(), Some(3));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "auction_id,bidder_id,bid\n1,1,abc\n").unwrap();
    assert_eq!(rgpv(&["estimate", "--input", s(&bad), "--output", s(&out)]).status.code(), Some(3));
}

#[test]
fn estimate_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = bids_file(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(rgpv(&["estimate", "--input", s(&input), "--output", s(&a), "--grid-step", "0.01"]).status.success());
    assert!(rgpv(&["--threads", "2", "estimate", "--input", s(&input), "--output", s(&b), "--grid-step", "0.01"])
        .status
        .success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert!(meta["bandwidths"]["h_f"].as_f64().unwrap() > 0.0);
    let header = fs::read_to_string(&a).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "v,f_gpv,f_rgpv,var_gpv,var_rgpv,se_gpv,se_rgpv");
}

#[test]
fn band_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = bids_file(dir.path());
    let out = dir.path().join("band.csv");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"band": {"alpha": 0.1, "boot": 40, "seed": 11, "grid_step": 0.02}}"#).unwrap();
    let status = rgpv(&["band", "--config", s(&cfg), "--input", s(&input), "--output", s(&out), "--boot", "25"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("band.json")).unwrap()).unwrap();
    let band = &meta["bands"][0];
    assert_eq!(band["n_boot"], 25);
    assert_eq!(band["alpha"], 0.1);
    assert_eq!(band["seed"], 11);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.iter().all(|r| r[3] <= r[1] && r[1] <= r[4]));

    fs::write(&cfg, r#"{"band": {"alpah": 0.1}}"#).unwrap();
    assert_eq!(rgpv(&["band", "--config", s(&cfg), "--input", s(&input), "--output", s(&out)]).status.code(), Some(2));
}

#[test]
fn homogenize_and_panel_band() {
    let dir = tempfile::tempdir().unwrap();
    let input = panel_file(dir.path());
    let out = dir.path().join("hom.csv");
    assert!(rgpv(&["homogenize", "--input", s(&input), "--output", s(&out), "--x0", "0"]).status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "auction_id,bidder_id,n_bidders,bid,homogenized_bid");
    assert_eq!(text.lines().count(), 1 + 45 * 2 + 45 * 3);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("hom.json")).unwrap()).unwrap();
    let beta = meta["regression"]["beta"][0].as_f64().unwrap();
    // auction "2-0" has x = -0.5, so with x0 = 0 its bids scale by exp(0.5 β)
    let row: Vec<&str> = text.lines().find(|l| l.starts_with("2-0,")).unwrap().split(',').collect();
    let (bid, hom): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
    assert!((hom - bid * (0.5 * beta).exp()).abs() < 1e-12 * bid);

    let band = dir.path().join("pband.csv");
    let run = rgpv(&["band", "--panel", "--input", s(&input), "--output", s(&band), "--boot", "20", "--grid-step", "0.02"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(dir.path().join("pband-groups.csv").exists());
}

#[test]
fn simulate_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let records = dir.path().join("records.csv");
    let out = rgpv(&[
        "simulate", "--reps", "1", "--boot", "20", "--total-bids", "500", "--grid-step", "0.01", "--output",
        s(&report), "--records", s(&records),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["completed"], 1);
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(&records).unwrap().lines().count(), 1 + 4);
}
