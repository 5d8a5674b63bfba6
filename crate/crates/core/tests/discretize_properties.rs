use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rccn::discretize::{DiscretizationScheme, Mode};

fn scheme_strategy() -> impl Strategy<Value = DiscretizationScheme> {
    (prop::bool::ANY, 0.1f64..5.0, 1.5f64..40.0, 1usize..96).prop_map(|(sid, a, ratio, k)| {
        let mode = if sid { Mode::SpacingIncreasing } else { Mode::Uniform };
        DiscretizationScheme::new(mode, a, a * ratio, k).unwrap()
    })
}

proptest! {
    #[test]
    fn encode_is_monotone(s in scheme_strategy(), d1 in 0.01f64..400.0, d2 in 0.01f64..400.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(s.encode(lo).unwrap() <= s.encode(hi).unwrap());
    }

    #[test]
    fn decoded_bin_contains_the_clamped_depth(s in scheme_strategy(), d in 0.01f64..400.0) {
        let edges = s.thresholds().unwrap();
        let j = s.encode(d).unwrap();
        let c = d.clamp(s.min_depth, s.max_depth);
        prop_assert!(edges[j] <= c && c <= edges[j + 1]);
        let rep = s.decode(j).unwrap();
        prop_assert!(edges[j] <= rep && rep <= edges[j + 1]);
    }

    #[test]
    fn sid_log_edges_are_evenly_spaced(a in 0.05f64..5.0, ratio in 1.5f64..200.0, k in 1usize..128) {
        let s = DiscretizationScheme::new(Mode::SpacingIncreasing, a, a * ratio, k).unwrap();
        let logs: Vec<f64> = s.thresholds().unwrap().iter().map(|e| e.ln()).collect();
        let step = ratio.ln() / k as f64;
        for j in 0..k {
            prop_assert!((logs[j + 1] - logs[j] - step).abs() < 1e-12);
        }
    }
}

#[test]
fn ten_thousand_depths_round_trip_into_their_edge_pair() {
    let s = DiscretizationScheme::new(Mode::SpacingIncreasing, 1.0, 80.0, 40).unwrap();
    let edges = s.thresholds().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let d: f64 = rng.gen_range(0.2..120.0);
        let c = d.clamp(1.0, 80.0);
        let j = s.encode(d).unwrap();
        let back = s.decode(j).unwrap();
        assert!(edges[j] <= c && c <= edges[j + 1]);
        assert!(edges[j] <= back && back <= edges[j + 1]);
    }
}

#[test]
fn random_map_error_is_within_half_a_log_bin() {
    let (a, b, k): (f64, f64, usize) = (1.0, 40.0, 24);
    let s = DiscretizationScheme::new(Mode::SpacingIncreasing, a, b, k).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let depth: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(a..b)).collect();
    let map = s.encode_map(&depth, &vec![true; depth.len()], 32, 32).unwrap();
    let back = map.decode_map().unwrap();
    let mse = depth.iter().zip(&back).map(|(d, q)| (d.ln() - q.ln()).powi(2)).sum::<f64>() / depth.len() as f64;
    assert!(mse.sqrt() <= (b / a).ln() / (2.0 * k as f64) + 1e-12);
}

#[test]
fn sid_beats_uniform_on_log_uniform_depths() {
    let (a, b, k): (f64, f64, usize) = (1.0, 80.0, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let depths: Vec<f64> = (0..100_000).map(|_| (rng.gen_range(0.0..1.0) * (b / a).ln()).exp() * a).collect();
    let sid = DiscretizationScheme::new(Mode::SpacingIncreasing, a, b, k).unwrap();
    let ud = DiscretizationScheme::new(Mode::Uniform, a, b, k).unwrap();
    let (fs, fu) = (sid.quantization_rmse_log(&depths).unwrap(), ud.quantization_rmse_log(&depths).unwrap());
    assert!(fs < fu, "SID {fs} vs UD {fu}");
}

#[test]
fn high_precision_edges() {
    // 80^(j/80) for j = 1, 37, 79, evaluated with 40 significant digits.
    let s = DiscretizationScheme::new(Mode::SpacingIncreasing, 1.0, 80.0, 80).unwrap();
    let edges = s.thresholds().unwrap();
    for (j, want) in [(1, 1.056_303_271_457_476_8), (37, 7.588_905_047_897_950_4), (79, 75.735_825_270_726_264)] {
        assert!((edges[j] - want).abs() <= 1e-14 * want, "l_{j} = {}", edges[j]);
    }
}
