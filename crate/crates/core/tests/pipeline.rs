use bnews_core::estimator::{warning_scan, WindowPolicy};
use bnews_core::rdsim::{read_bnts, simulate, write_bnts, NoiseModel, RandomMap, SimOptions, TimeSeries};
use bnews_core::rng::split_seed;
use bnews_core::setvalued::{examples, minimal_invariant_sets, Interval};

#[test]
fn simulated_orbit_stays_in_the_minimal_invariant_set() {
    let sigma = 0.5;
    let fam = examples::pitchfork(sigma).unwrap();
    for (alpha, x0) in [(1.6, 0.0), (3.0, 2.0), (3.0, -2.0)] {
        let e = minimal_invariant_sets(&fam.pair(alpha).unwrap(), fam.domain(), 1e-12).unwrap();
        let noise = NoiseModel::uniform(-sigma, sigma).unwrap();
        let map = RandomMap::additive("pitchfork", move |x: f64| 0.5 * alpha * x.atan() + 0.5 * x, &noise, fam.domain());
        let s = simulate(&map, &noise, x0, 200_000, &SimOptions::default(), 9).unwrap();
        // the orbit lives in one component and spreads over much of it
        let comp = e.components().iter().find(|c| c.contains(s.samples()[0])).copied().expect("orbit starts in E");
        assert!(s.samples().iter().all(|&x| comp.lo - 1e-9 <= x && x <= comp.hi + 1e-9));
        let lo = s.samples().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.samples().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo > 0.5 * comp.len(), "{alpha}: [{lo}, {hi}] in {comp:?}");
    }
}

#[test]
fn series_survive_a_binary_round_trip_and_estimate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let noise = NoiseModel::uniform(-1.0, 1.0).unwrap();
    let s = simulate(&RandomMap::affine(0.5, 0.0, &noise), &noise, 0.0, 100_000, &SimOptions::default(), 3).unwrap();
    let path = dir.path().join("s.bnts");
    write_bnts(&path, 1, s.samples(), &serde_json::to_string(&s.meta).unwrap()).unwrap();
    let (ch, data, meta) = read_bnts(&path).unwrap();
    assert_eq!(ch, 1);
    let back = TimeSeries::new(data, serde_json::from_str(&meta).unwrap()).unwrap();
    assert_eq!(back, s);
    let policy = WindowPolicy::default();
    assert_eq!(policy.estimate(&s).unwrap().d.to_bits(), policy.estimate(&back).unwrap().d.to_bits());
}

#[test]
fn warning_rises_towards_the_pitchfork_but_not_for_a_linear_map() {
    let sigma = 0.1;
    let noise = NoiseModel::uniform(-sigma, sigma).unwrap();
    let domain = Interval { lo: -10.0, hi: 10.0 };
    let alphas = [3.0, 2.2, 1.6, 1.48];
    let series: Vec<(f64, TimeSeries)> = alphas
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let map = RandomMap::additive("pitchfork", move |x: f64| 0.5 * a * x.atan() + 0.5 * x, &noise, domain);
            (a, simulate(&map, &noise, 1.5, 400_000, &SimOptions::default(), split_seed(1, i as u64)).unwrap())
        })
        .collect();
    let rows = warning_scan(&series, &WindowPolicy::default(), 0.95).unwrap();
    // rows come back sorted by α; D grows as α decreases towards α₀
    let d: Vec<f64> = rows.iter().map(|r| r.d.unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] > w[1]), "{d:?}");

    let linear: Vec<(f64, TimeSeries)> = (0..3)
        .map(|i| {
            let s = simulate(&RandomMap::affine(0.5, i as f64, &noise), &noise, 0.0, 100_000, &SimOptions::default(), i).unwrap();
            (i as f64, s)
        })
        .collect();
    let rows = warning_scan(&linear, &WindowPolicy::default(), 0.95).unwrap();
    assert!(rows.iter().all(|r| !r.flag && r.d.unwrap() < 0.6), "{rows:?}");
}
