//! Bid panels, the empirical CDF, support endpoints and rule-of-thumb bandwidths.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule-of-thumb constant for the bid bandwidth (fourth-order triweight).
pub const BID_BANDWIDTH_CONSTANT: f64 = 3.72;
/// Rule-of-thumb constant for the value bandwidth (second-order triweight).
pub const VALUE_BANDWIDTH_CONSTANT: f64 = 3.15;

/// A rectangular panel of bids: `n_bidders` bids in each of `n_auctions` auctions.
///
/// Bids are stored auction-major (`bids[l * N + i]`). A sorted copy is kept
/// for CDF queries.
#[derive(Debug, Clone, PartialEq)]
pub struct BidSample {
    bids: Vec<f64>,
    sorted: Vec<f64>,
    n_bidders: usize,
    n_auctions: usize,
}

impl BidSample {
    pub fn new(bids: Vec<f64>, n_bidders: usize) -> Result<Self> {
        if bids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if n_bidders < 2 {
            return Err(Error::invalid(format!(
                "need at least two bidders per auction, got {n_bidders}"
            )));
        }
        if bids.len() % n_bidders != 0 {
            return Err(Error::invalid(format!(
                "{} bids do not split into auctions of {n_bidders}",
                bids.len()
            )));
        }
        if let Some(&b) = bids.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::invalid(format!("bids must be finite and nonnegative, got {b}")));
        }
        let mut sorted = bids.clone();
        sorted.sort_by(f64::total_cmp);
        let n_auctions = bids.len() / n_bidders;
        Ok(Self {
            bids,
            sorted,
            n_bidders,
            n_auctions,
        })
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    pub fn n_auctions(&self) -> usize {
        self.n_auctions
    }

    /// Total number of bids, `N·L`.
    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    /// Bids of auction `l`.
    pub fn auction(&self, l: usize) -> &[f64] {
        &self.bids[l * self.n_bidders..(l + 1) * self.n_bidders]
    }

    /// `(1/NL) #{B ≤ b}`.
    pub fn empirical_cdf(&self, b: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= b) as f64 / self.sorted.len() as f64
    }

    /// Sample minimum and maximum of all bids.
    pub fn support_bounds(&self) -> (f64, f64) {
        (self.sorted[0], self.sorted[self.sorted.len() - 1])
    }

    pub fn std_dev(&self) -> f64 {
        sample_std(&self.bids)
    }
}

/// `(n-1)`-denominator standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Bandwidths for the bid density (`h_g`), the value density (`h_f`) and the
/// rearrangement (`h_r`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub h_g: f64,
    pub h_f: f64,
    pub h_r: f64,
}

impl BandwidthPlan {
    pub fn new(h_g: f64, h_f: f64, h_r: f64) -> Result<Self> {
        for (name, h) in [("h_g", h_g), ("h_f", h_f), ("h_r", h_r)] {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {h}")));
            }
        }
        Ok(Self { h_g, h_f, h_r })
    }
}

/// `h_g = 3.72 σ_b (NL)^(-1/5)`.
pub fn bid_bandwidth(sample: &BidSample) -> Result<f64> {
    rule_of_thumb(BID_BANDWIDTH_CONSTANT, sample.std_dev(), sample.len(), "bids")
}

/// `h_f = 3.15 σ_v (NL)^(-1/5)` from unconstrained pseudo-values.
pub fn value_bandwidth(pseudo_values: &[f64]) -> Result<f64> {
    rule_of_thumb(
        VALUE_BANDWIDTH_CONSTANT,
        sample_std(pseudo_values),
        pseudo_values.len(),
        "pseudo-values",
    )
}

fn rule_of_thumb(constant: f64, sigma: f64, n: usize, what: &str) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::DegenerateSample(format!("{what} have zero variance")));
    }
    Ok(constant * sigma * (n as f64).powf(-0.2))
}

/// Default plan: rule-of-thumb `h_g` and `h_f`, with `h_r = h_f`.
pub fn bandwidth_plan(sample: &BidSample, pseudo_values: &[f64]) -> Result<BandwidthPlan> {
    let h_g = bid_bandwidth(sample)?;
    let h_f = value_bandwidth(pseudo_values)?;
    BandwidthPlan::new(h_g, h_f, h_f)
}

#[derive(Debug, Deserialize)]
struct BidRow {
    auction_id: String,
    bidder_id: String,
    bid: String,
}

/// Orders ids numerically when both parse as numbers, lexically otherwise.
pub(crate) fn id_cmp(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

pub(crate) fn parse_number(raw: &str, line: u64, column: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::NonNumeric {
            line,
            column: column.to_string(),
            raw: raw.to_string(),
        })
}

/// Reads an `auction_id,bidder_id,bid` CSV into a rectangular panel.
///
/// Rows may come in any order; auctions and bidders are sorted by id so the
/// resulting panel does not depend on row order.
pub fn load_bids(path: impl AsRef<Path>) -> Result<BidSample> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_bids(file)
}

pub fn read_bids<R: std::io::Read>(reader: R) -> Result<BidSample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["auction_id", "bidder_id", "bid"] {
        if !headers.iter().any(|h| h == col) {
            if headers.is_empty() {
                return Err(Error::EmptyInput);
            }
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let mut auctions: BTreeMap<SortKey, Vec<(String, f64)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<BidRow>().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        let bid = parse_number(&row.bid, line, "bid")?;
        auctions
            .entry(SortKey(row.auction_id))
            .or_default()
            .push((row.bidder_id, bid));
    }
    if auctions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let expected = auctions.values().next().map(Vec::len).unwrap_or(0);
    let mut bids = Vec::new();
    for (id, mut rows) in auctions {
        if rows.len() != expected {
            return Err(Error::RaggedPanel {
                auction: id.0,
                expected,
                found: rows.len(),
            });
        }
        rows.sort_by(|a, b| id_cmp(&a.0, &b.0));
        bids.extend(rows.into_iter().map(|(_, b)| b));
    }
    BidSample::new(bids, expected)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct SortKey(pub String);

impl Ord for SortKey {
    fn cmp(&self, other: &Self) -> Ordering {
        id_cmp(&self.0, &other.0)
    }
}

impl PartialOrd for SortKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Writes a panel back out as `auction_id,bidder_id,bid`.
pub fn write_bids<W: std::io::Write>(sample: &BidSample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["auction_id", "bidder_id", "bid"])?;
    for l in 0..sample.n_auctions() {
        for (i, b) in sample.auction(l).iter().enumerate() {
            w.write_record([(l + 1).to_string(), (i + 1).to_string(), format!("{b}")])?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
