use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgpv::bootstrap::{critical_value, resample};
use rgpv::hetero::{fit_homogenization, Auction, HeteroPanel};
use rgpv::kernels::{triweight, triweight_integral};
use rgpv::rearrange::smooth_strategy;
use rgpv::sample::{bid_bandwidth, BidSample};
use rgpv::strategy::{InverseBidCurve, KernelBids};

fn random_sample(nl: usize, n: usize, seed: u64) -> BidSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slope = 1.0 - 1.0 / n as f64;
    let bids = (0..nl).map(|_| slope * rng.gen::<f64>().powf(0.7 + rng.gen::<f64>())).collect();
    BidSample::new(bids, n).unwrap()
}

fn strategy_for(sample: &BidSample, h_r: f64, m: usize) -> rgpv::rearrange::RearrangedStrategy {
    let bids = KernelBids::from_sample(sample, bid_bandwidth(sample).unwrap()).unwrap();
    let curve = InverseBidCurve::build(&bids, sample.n_bidders(), m).unwrap();
    smooth_strategy(&curve, h_r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rearranged_strategy_is_monotone(
        auctions in 10usize..60,
        n in 2usize..7,
        seed in any::<u64>(),
        h_r in 0.01f64..0.3,
        ts in prop::collection::vec((-0.5f64..2.0, -0.5f64..2.0), 20),
    ) {
        let s = random_sample(auctions * n, n, seed);
        let st = strategy_for(&s, h_r, 400);
        for (a, b) in ts {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(st.eval(lo) <= st.eval(hi));
        }
    }

    #[test]
    fn pseudo_inverse_reaches_the_level(
        auctions in 10usize..60,
        n in 2usize..7,
        seed in any::<u64>(),
        q in 0.01f64..0.99,
    ) {
        let s = random_sample(auctions * n, n, seed);
        let st = strategy_for(&s, 0.1, 400);
        let (lo, hi) = st.support();
        let b = lo + q * (hi - lo);
        let u = st.pseudo_inverse(b).unwrap();
        let (left, right) = st.bracket();
        let tol = 1e-9 * (right - left);
        prop_assert!(st.eval(u + tol) >= b - 1e-12);
        prop_assert!(st.eval(u - 10.0 * tol) <= b + 1e-12);
    }

    #[test]
    fn constrained_values_preserve_bid_order(
        auctions in 10usize..40,
        n in 2usize..6,
        seed in any::<u64>(),
    ) {
        let s = random_sample(auctions * n, n, seed);
        let st = strategy_for(&s, 0.08, 300);
        let values = st.constrained_pseudo_values(s.bids()).unwrap();
        let mut pairs: Vec<(f64, f64)> = s.bids().iter().copied().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn critical_value_is_an_order_statistic_decreasing_in_alpha(
        values in prop::collection::vec(0.0f64..10.0, 20..200),
        a in 0.01f64..0.5,
        d in 0.0f64..0.4,
    ) {
        let hi = critical_value(&values, a).unwrap();
        let lo = critical_value(&values, a + d).unwrap();
        prop_assert!(lo <= hi);
        prop_assert!(values.contains(&hi));
    }

    #[test]
    fn resampled_bids_come_from_the_data(nl in 4usize..80, seed in any::<u64>()) {
        let s = random_sample(nl * 2, 2, seed);
        let r = resample(&s, seed ^ 7);
        prop_assert_eq!(r.len(), s.len());
        prop_assert!(r.bids().iter().all(|b| s.bids().contains(b)));
    }

    #[test]
    fn integrated_kernel_is_a_distribution_function(u in -2.0f64..2.0, d in 0.0f64..1.0) {
        let a = triweight_integral(u);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(triweight_integral(u + d) >= a);
        prop_assert!(triweight(u) >= 0.0);
    }

    #[test]
    fn rescaling_bids_shifts_only_the_intercepts(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let auctions: Vec<Auction> = (0..24)
            .map(|i| {
                let n = 2 + i % 2;
                Auction {
                    id: i.to_string(),
                    covariates: vec![rng.gen::<f64>()],
                    bidder_ids: (0..n).map(|j| j.to_string()).collect(),
                    bids: (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect(),
                }
            })
            .collect();
        let scaled: Vec<Auction> = auctions
            .iter()
            .map(|a| Auction { bids: a.bids.iter().map(|b| b * c).collect(), ..a.clone() })
            .collect();
        let base = fit_homogenization(&HeteroPanel::new(vec!["x".into()], auctions).unwrap()).unwrap();
        let other = fit_homogenization(&HeteroPanel::new(vec!["x".into()], scaled).unwrap()).unwrap();
        prop_assert!((base.beta[0] - other.beta[0]).abs() < 1e-9);
        for (n, a) in &base.alpha_by_n {
            prop_assert!((other.alpha_by_n[n] - a - c.ln()).abs() < 1e-9);
        }
    }
}
