use rgpv_demo::{band_json, compare, ratio};

#[test]
fn comparison_payload_has_aligned_curves() {
    let v = compare(1.0, 4, 150, 2, 1.0).unwrap();
    let n = v["grid"].as_array().unwrap().len();
    for key in ["truth", "gpv", "rgpv"] {
        assert_eq!(v[key].as_array().unwrap().len(), n);
    }
    let bids = v["bids"].as_array().unwrap().len();
    assert_eq!(v["xi"].as_array().unwrap().len(), bids);
    assert_eq!(v["rearranged"].as_array().unwrap().len(), bids);
    let r: Vec<f64> = v["rearranged"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(r.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn band_payload_is_ordered() {
    let v = band_json(1.0, 3, 150, 4, "rgpv", 0.1, 25, 0.3, 0.7).unwrap();
    let lo = v["lower"].as_array().unwrap();
    let hi = v["upper"].as_array().unwrap();
    assert!(lo.iter().zip(hi).all(|(a, b)| a.as_f64() <= b.as_f64()));
    assert!(band_json(1.0, 3, 150, 4, "mle", 0.1, 25, 0.3, 0.7).is_err());
}

#[test]
fn ratio_matches_the_equal_bandwidth_value() {
    assert!((ratio(1.0, 5, false, false).unwrap() - 1.587).abs() < 0.01);
    assert!(ratio(1.0, 5, true, true).unwrap() > 1.0);
}
