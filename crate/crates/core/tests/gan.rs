mod common;

use common::*;
use lipbarrier::certify::{estimate_lipschitz, CertMode};
use lipbarrier::nn::{Activation, Target};
use lipbarrier::wgan::{
    clip_norm_bound, sample_ring, wasserstein_estimate, wgan_train, GanConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ring_modes_are_uniformly_populated() {
    let n = 8000;
    let d = sample_ring(n, 8, 1.0, 0.05, 21);
    let mut counts = [0usize; 8];
    for s in &d.samples {
        let Target::Label(k) = s.target else { panic!("ring samples carry their mode") };
        counts[k] += 1;
    }
    let mean = n as f64 / 8.0;
    let sd = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn critic_gap_respects_certified_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let f = random_net(&mut rng, &[2, 6, 6, 1], Activation::LeakyRelu { slope: 0.2 });
        let bound = estimate_lipschitz(&f, CertMode::FullDiag, 1e-3);
        let real: Vec<Vec<f64>> = (0..20).map(|_| random_point(&mut rng, 2, 1.0)).collect();
        let fake: Vec<Vec<f64>> = (0..15).map(|_| random_point(&mut rng, 2, 3.0)).collect();
        let mean_pair: f64 = real
            .iter()
            .flat_map(|r| fake.iter().map(move |g| dist(r, g)))
            .sum::<f64>()
            / (real.len() * fake.len()) as f64;
        let w = wasserstein_estimate(&f, &real, &fake).unwrap();
        assert!(w.abs() <= bound * mean_pair * (1.0 + 1e-12));
    }
}

fn short(mut cfg: GanConfig, epochs: usize, seed: u64) -> GanConfig {
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg
}

#[test]
fn barrier_critic_against_frozen_generator() {
    let data = sample_ring(256, 8, 1.0, 0.05, 3);
    let mut cfg = short(GanConfig::barrier(), 12, 0);
    cfg.freeze_generator = true;
    let (_, _, metrics) = wgan_train(&cfg, &data).unwrap();
    // The generator outputs the origin, so the transport cost is the mean norm.
    let mean_norm: f64 =
        data.samples.iter().map(|s| dist(&s.x, &[0.0, 0.0])).sum::<f64>() / data.len() as f64;
    for e in &metrics.epochs {
        assert!(e.certified_bound <= 1.0);
        assert!(e.wasserstein <= e.certified_bound * mean_norm + 1e-12);
    }
    let last = metrics.epochs.last().unwrap().wasserstein;
    assert!(last > 0.3 * mean_norm, "critic gap {last} vs {mean_norm}");
    assert!(metrics.samples.iter().all(|p| p == &vec![0.0, 0.0]));
}

#[test]
fn clipped_critic_stays_under_closed_form_bound() {
    let data = sample_ring(256, 8, 1.0, 0.05, 4);
    let cfg = short(GanConfig::weight_clip(0.01), 4, 1);
    let (_, critic, metrics) = wgan_train(&cfg, &data).unwrap();
    let cap = clip_norm_bound(&cfg.critic_dims, 0.01);
    for e in &metrics.epochs {
        assert!(e.certified_bound <= cap * (1.0 + 1e-9), "{} > {cap}", e.certified_bound);
    }
    assert!(critic.weights.iter().all(|w| w.max_abs() <= 0.01));
}

#[test]
fn gradient_penalty_runs_and_reports() {
    let data = sample_ring(128, 8, 1.0, 0.05, 5);
    let (_, _, metrics) = wgan_train(&short(GanConfig::gradient_penalty(10.0), 2, 2), &data).unwrap();
    assert_eq!(metrics.epochs.len(), 2);
    assert!(metrics.epochs.iter().all(|e| e.certified_bound.is_finite() && e.multiplier_bound.is_none()));
    assert!(metrics.samples_csv().starts_with("x1,x2\n"));
}

#[test]
fn barrier_runs_are_reproducible() {
    let data = sample_ring(128, 8, 1.0, 0.05, 6);
    let cfg = short(GanConfig::barrier(), 3, 9);
    let (g1, d1, m1) = wgan_train(&cfg, &data).unwrap();
    let (g2, d2, m2) = wgan_train(&cfg, &data).unwrap();
    assert_eq!(m1.to_csv(), m2.to_csv());
    assert_eq!((g1, d1), (g2, d2));
    assert!(m1.epochs.iter().all(|e| e.certified_bound <= 1.0));
    assert!(m1.epochs.iter().all(|e| e.multiplier_bound.is_some_and(|b| b <= 1.0)));
}

#[test]
fn rejects_bad_configuration() {
    let data = sample_ring(16, 2, 1.0, 0.0, 0);
    let mut cfg = GanConfig::barrier();
    cfg.critic_dims = vec![3, 4, 1];
    assert!(wgan_train(&cfg, &data).is_err());
    let mut cfg = GanConfig::gradient_penalty(-1.0);
    cfg.epochs = 1;
    assert!(wgan_train(&cfg, &data).is_err());
}
