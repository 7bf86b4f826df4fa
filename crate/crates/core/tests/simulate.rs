use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use psdmap::model::Location;
use psdmap::simulate::{
    calibrate, sample_shadowing, MeasurementNoise, QuantizerChoice, Scenario, ScenarioConfig, Shadowing,
};

fn pair_moments(points: &[Location], draws: usize) -> (f64, f64, f64) {
    let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
    for seed in 0..draws as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_shadowing(points, 2.0, 0.8, 1, &mut rng).unwrap();
        let (a, b) = (s[0][0], s[0][points.len() - 1]);
        s00 += a * a;
        s11 += b * b;
        s01 += a * b;
    }
    let n = draws as f64;
    (s00 / n, s11 / n, s01 / n)
}

#[test]
fn single_point_variance_within_five_percent() {
    let (v, _, _) = pair_moments(&[Location::new(vec![0.3, 0.1])], 10_000);
    assert!((v - 2.0).abs() <= 0.05 * 2.0, "variance {v}");
}

#[test]
fn covariance_at_unit_distance_within_five_percent() {
    // 2-D points use the Cholesky sampler, 1-D points the Markov sampler.
    let planar = [Location::new(vec![0.0, 0.0]), Location::new(vec![0.6, 0.8])];
    let line = [Location::new(vec![0.2]), Location::new(vec![0.7]), Location::new(vec![1.2])];
    for points in [&planar[..], &line[..]] {
        let (v0, v1, c) = pair_moments(points, 10_000);
        assert!((c - 1.6).abs() <= 0.05 * 1.6, "covariance {c}");
        assert!((v0 - 2.0).abs() <= 0.1 && (v1 - 2.0).abs() <= 0.1);
    }
}

#[test]
fn sixteen_bit_round_trip() {
    let mut cfg = ScenarioConfig::line(3, 40, 5, 16, QuantizerChoice::Uniform);
    // Range covering every report, so nothing clips.
    cfg.quantizer.clip_prob = 1e-9;
    cfg.quantizer.calibration_samples = 200_000;
    let cal = calibrate(&cfg, 3).unwrap();
    let sc = Scenario::generate(&cfg, &cal, 3, 0).unwrap();
    let upper = cal.quantizer.upper();
    let mut checked = 0;
    for r in &sc.records {
        let raw = r.raw.unwrap();
        if raw < upper {
            assert!(r.y - r.eps <= raw && raw < r.y + r.eps);
            checked += 1;
        }
    }
    assert_eq!(checked, sc.records.len());
    assert_eq!(sc.stats.error_rate, 0.0);
}

#[test]
fn noiseless_reports_have_no_cell_errors() {
    let cfg = ScenarioConfig::line(2, 30, 4, 3, QuantizerChoice::Cpq);
    let cal = calibrate(&cfg, 1).unwrap();
    let sc = Scenario::generate(&cfg, &cal, 1, 2).unwrap();
    assert_eq!(sc.stats.error_rate, 0.0);
    assert_eq!(cal.noise_std, 0.0);
}

#[test]
fn bisected_noise_hits_fifteen_percent_error_rate() {
    let mut cfg = ScenarioConfig::line(3, 500, 4, 3, QuantizerChoice::Uniform);
    cfg.shadowing = Shadowing { variance_db: 2.0, rho: 0.8 };
    cfg.noise = MeasurementNoise::ErrorRate(0.15);
    cfg.eval_points = 10;
    let cal = calibrate(&cfg, 21).unwrap();
    assert!(cal.noise_std > 0.0);
    // 5 fresh runs of 2000 reports each.
    let mut rate = 0.0;
    for run in 1..=5 {
        rate += Scenario::generate(&cfg, &cal, 21, run).unwrap().stats.error_rate / 5.0;
    }
    assert!((rate - 0.15).abs() <= 0.02, "error rate {rate}");
}

#[test]
fn identical_seeds_give_identical_records() {
    let cfg = ScenarioConfig::square();
    let cal = calibrate(&cfg, 7).unwrap();
    let a = Scenario::generate(&cfg, &cal, 7, 3).unwrap();
    let b = Scenario::generate(&cfg, &calibrate(&cfg, 7).unwrap(), 7, 3).unwrap();
    assert_eq!(a.records, b.records);
    let c = Scenario::generate(&cfg, &cal, 7, 4).unwrap();
    assert_ne!(a.records, c.records);
}
