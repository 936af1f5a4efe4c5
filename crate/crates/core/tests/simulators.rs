mod common;

use common::PATTERN_VARIANCE;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stprior_core::data::{blob_tracks, simulate_gray_scott, simulate_moving_blobs, BlobSceneParams, GrayScott, GrayScottParams};

fn diffusion_only(du: f64, dv: f64, side: usize) -> GrayScottParams {
    GrayScottParams { du, dv, feed: 0.0, kill: 0.0, height: side, width: side, ..Default::default() }
}

fn random_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[test]
fn diffusion_conserves_mass_for_1000_steps() {
    let side = 24;
    let u = random_field(side * side, 7);
    let mut sim = GrayScott::from_state(diffusion_only(0.2, 0.1, side), u, vec![0.0; side * side]).unwrap();
    let mut prev: f64 = sim.u().iter().sum();
    for _ in 0..1000 {
        sim.step().unwrap();
        let now: f64 = sim.u().iter().sum();
        assert!(((now - prev) / prev).abs() < 1e-9, "{} -> {}", prev, now);
        prev = now;
    }
}

#[test]
fn uniform_state_is_a_fixed_point() {
    let p = GrayScottParams { height: 16, width: 16, steps_per_frame: 5, ..Default::default() };
    let mut sim = GrayScott::from_state(p, vec![1.0; 256], vec![0.0; 256]).unwrap();
    let first = sim.frame();
    for _ in 0..100 {
        for _ in 0..5 {
            sim.step().unwrap();
        }
        assert_eq!(sim.frame(), first);
    }
}

#[test]
fn default_regime_forms_patterns() {
    let mut sim = GrayScott::seeded(GrayScottParams::default(), 0).unwrap();
    for _ in 0..500 {
        sim.step().unwrap();
    }
    let var = variance(sim.u());
    assert!(var > 1e-4, "variance {}", var);
    assert!((var - PATTERN_VARIANCE).abs() <= 0.2 * PATTERN_VARIANCE, "variance {} vs recorded {}", var, PATTERN_VARIANCE);
}

#[test]
fn gray_scott_is_deterministic_and_in_range() {
    let p = GrayScottParams { height: 16, width: 16, warmup: 40, steps_per_frame: 4, ..Default::default() };
    let a = simulate_gray_scott(&p, 3, 6).unwrap();
    let b = simulate_gray_scott(&p, 3, 6).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(a.dims(), [6, 2, 16, 16]);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn lone_blob_moves_linearly_away_from_walls() {
    let p = BlobSceneParams { n_blobs: 1, radius: 3.0, speed: 0.5, background: 0.0, height: 64, width: 64, seed: 11 };
    let track = blob_tracks(&p).unwrap()[0];
    let lo = p.radius;
    let hi = 64.0 - p.radius;
    for t in 0..8 {
        let (r, c) = track.center(t, &p);
        let free = (track.start.0 + t as f64 * track.velocity.0, track.start.1 + t as f64 * track.velocity.1);
        if (lo..=hi).contains(&free.0) && (lo..=hi).contains(&free.1) {
            assert_eq!((r, c), free);
        }
    }
}

#[test]
fn blob_peak_follows_the_track() {
    let p = BlobSceneParams { n_blobs: 1, radius: 6.0, speed: 1.5, background: 0.0, height: 32, width: 32, seed: 2 };
    let seq = simulate_moving_blobs(&p, 6).unwrap();
    let track = blob_tracks(&p).unwrap()[0];
    for t in 0..6 {
        let frame = seq.frame(t);
        let argmax = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
        let (r, c) = track.center(t, &p);
        assert!(((argmax / 32) as f64 - r).abs() <= 0.5 + 1e-9);
        assert!(((argmax % 32) as f64 - c).abs() <= 0.5 + 1e-9);
    }
}

#[test]
fn blobs_are_deterministic() {
    let p = BlobSceneParams { seed: 5, ..Default::default() };
    let a = simulate_moving_blobs(&p, 4).unwrap();
    let b = simulate_moving_blobs(&p, 4).unwrap();
    assert_eq!(a.data(), b.data());
    let q = BlobSceneParams { seed: 6, ..Default::default() };
    assert_ne!(a.data(), simulate_moving_blobs(&q, 4).unwrap().data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reaction_without_feed_conserves_total(seed in any::<u64>(), du in 0.0f64..0.25, dv in 0.0f64..0.25) {
        let side = 10;
        let u = random_field(side * side, seed);
        let v: Vec<f64> = random_field(side * side, seed ^ 0x5555).iter().map(|x| 0.25 * x).collect();
        let mut sim = GrayScott::from_state(diffusion_only(du, dv, side), u, v).unwrap();
        let total = |s: &GrayScott| s.u().iter().chain(s.v()).sum::<f64>();
        let start = total(&sim);
        for _ in 0..50 {
            sim.step().unwrap();
        }
        prop_assert!(((total(&sim) - start) / start).abs() < 1e-9);
    }

    #[test]
    fn diffusion_only_conserves_u(seed in any::<u64>(), du in 0.0f64..0.25) {
        let side = 12;
        let u = random_field(side * side, seed);
        let mut sim = GrayScott::from_state(diffusion_only(du, 0.1, side), u, vec![0.0; side * side]).unwrap();
        let start: f64 = sim.u().iter().sum();
        for _ in 0..100 {
            sim.step().unwrap();
            let now: f64 = sim.u().iter().sum();
            prop_assert!(((now - start) / start).abs() < 1e-9);
        }
    }

    #[test]
    fn blob_frames_stay_in_range(seed in any::<u64>(), n in 1usize..4, speed in 0.0f64..5.0, radius in 1.0f64..10.0) {
        let p = BlobSceneParams { n_blobs: n, radius, speed, background: 0.3, height: 24, width: 24, seed };
        let seq = simulate_moving_blobs(&p, 5).unwrap();
        prop_assert!(seq.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
