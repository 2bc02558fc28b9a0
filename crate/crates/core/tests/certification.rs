mod common;

use common::*;
use lipbarrier::certify::{
    check_qc, estimate_lipschitz, estimate_lipschitz_with, norm_product_bound, CertMode, QcSpec,
};
use lipbarrier::linalg::Matrix;
use lipbarrier::lipschitz::{bound_at_multipliers, is_feasible, LipschitzTarget, Multipliers};
use lipbarrier::nn::{Activation, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTIVATIONS: [Activation; 4] = [
    Activation::Tanh,
    Activation::Relu,
    Activation::LeakyRelu { slope: 0.2 },
    Activation::Sigmoid,
];

fn max_sampled_ratio(p: &MlpParams, rng: &mut ChaCha8Rng, pairs: usize) -> f64 {
    let n = p.input_dim();
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let x1 = random_point(rng, n, 3.0);
        // Half the pairs are close together to probe local slopes.
        let x2: Vec<f64> = if k % 2 == 0 {
            random_point(rng, n, 3.0)
        } else {
            x1.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect()
        };
        let d = dist(&x1, &x2);
        if d > 0.0 {
            worst = worst.max(dist(&reference_forward(p, &x1), &reference_forward(p, &x2)) / d);
        }
    }
    worst
}

#[test]
fn feasible_certificates_bound_sampled_slopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut certified = 0;
    while certified < 50 {
        let dims = random_dims(&mut rng, 3, 6);
        let act = ACTIVATIONS[certified % 4];
        let p = random_net(&mut rng, &dims, act);
        let m = random_multipliers(&mut rng, &p);
        let Some(b) = bound_at_multipliers(&p, &m) else { continue };
        let l = b * 1.0001 + 1e-9;
        let t = LipschitzTarget::new(l).unwrap();
        assert!(is_feasible(&p, &m, t, 0.0));
        let n = p.input_dim();
        for _ in 0..10_000 {
            let x1 = random_point(&mut rng, n, 4.0);
            let x2 = random_point(&mut rng, n, 4.0);
            let lhs = dist(&reference_forward(&p, &x1), &reference_forward(&p, &x2));
            assert!(lhs <= l * dist(&x1, &x2) + 1e-9, "{lhs} > {l} * |dx|");
        }
        certified += 1;
    }
}

#[test]
fn certified_quadratic_constraints_hold_on_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut certified = 0;
    let mut attempts = 0;
    while certified < 20 {
        attempts += 1;
        assert!(attempts < 2000);
        let dims = random_dims(&mut rng, 3, 5);
        let p = random_net(&mut rng, &dims, ACTIVATIONS[attempts % 4]);
        let m = random_multipliers(&mut rng, &p);
        let l = rng.random_range(0.5..6.0);
        let qc = QcSpec::lipschitz(p.input_dim(), p.output_dim(), l, p.activation.slope_range());
        let res = check_qc(&p, &qc, &m, 0.0).unwrap();
        if !res.is_certified() {
            continue;
        }
        assert!(res.min_eig >= -1e-9);
        for _ in 0..10_000 {
            let x1 = random_point(&mut rng, p.input_dim(), 3.0);
            let x2 = random_point(&mut rng, p.input_dim(), 3.0);
            let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            let (y1, y2) = (reference_forward(&p, &x1), reference_forward(&p, &x2));
            let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
            assert!(qc.form(&dx, &dy) >= -1e-7);
        }
        certified += 1;
    }
}

#[test]
fn lipschitz_qc_verdict_matches_certificate_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut agree, mut total, mut positives) = (0, 0, 0);
    while total < 100 {
        let dims = random_dims(&mut rng, 4, 6);
        let p = random_net(&mut rng, &dims, Activation::Tanh);
        let m = random_multipliers(&mut rng, &p);
        // Keep L away from the exact boundary so rounding cannot decide the verdict.
        let l = match bound_at_multipliers(&p, &m) {
            Some(b) => b * if rng.random_bool(0.5) { 1.05 } else { 0.95 },
            None => rng.random_range(0.1..10.0),
        };
        let t = LipschitzTarget::new(l).unwrap();
        let qc = QcSpec::lipschitz(p.input_dim(), p.output_dim(), l, (0.0, 1.0));
        let qc_verdict = check_qc(&p, &qc, &m, 0.0).unwrap().is_certified();
        let feasible = is_feasible(&p, &m, t, 0.0);
        positives += usize::from(feasible);
        agree += usize::from(qc_verdict == feasible);
        total += 1;
    }
    assert_eq!(agree, total);
    assert!((10..=90).contains(&positives), "{positives} feasible of {total}");
}

#[test]
fn feasibility_is_monotone_in_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let dims = random_dims(&mut rng, 3, 6);
        let p = random_net(&mut rng, &dims, Activation::Tanh);
        let m = random_multipliers(&mut rng, &p);
        let l = rng.random_range(0.1..10.0);
        if is_feasible(&p, &m, LipschitzTarget::new(l).unwrap(), 1e-12) {
            for f in [1.001, 1.5, 10.0, 1e3] {
                assert!(is_feasible(&p, &m, LipschitzTarget::new(l * f).unwrap(), 1e-12));
            }
        }
    }
}

#[test]
fn relaxations_are_ordered_and_sound() {
    let tol = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..50 {
        let dims = random_dims(&mut rng, 3, 5);
        let p = random_net(&mut rng, &dims, ACTIVATIONS[k % 4]);
        let full = estimate_lipschitz(&p, CertMode::FullDiag, tol);
        let scalar = estimate_lipschitz(&p, CertMode::ScalarLambda, tol);
        let split = estimate_lipschitz(&p, CertMode::Split, tol);
        let np = norm_product_bound(&p);
        assert!(full <= scalar * (1.0 + tol), "full {full} scalar {scalar}");
        assert!(full <= split * (1.0 + tol), "full {full} split {split}");
        for b in [full, scalar, split] {
            assert!(b <= np * (1.0 + tol), "{b} > norm product {np}");
        }
        let sampled = max_sampled_ratio(&p, &mut rng, 2000);
        assert!(sampled <= full * (1.0 + 1e-9), "sampled {sampled} > certified {full}");
    }
}

#[test]
fn full_diag_certificates_are_checkable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let dims = random_dims(&mut rng, 3, 5);
        let p = random_net(&mut rng, &dims, Activation::Tanh);
        let est = estimate_lipschitz_with(&p, CertMode::FullDiag, 1e-3, None);
        let exact = bound_at_multipliers(&p, &est.multipliers).unwrap();
        assert!(exact <= est.bound * (1.0 + 1e-3), "{dims:?}: {exact} vs {}", est.bound);
        let t = LipschitzTarget::new(est.bound * (1.0 + 2e-3)).unwrap();
        assert!(is_feasible(&p, &est.multipliers, t, 0.0));
    }
}

#[test]
fn diagonal_chain_is_tight() {
    let tol = 1e-4;
    for c in [0.3, 1.0, 2.5] {
        let p = MlpParams::from_layers(
            vec![Matrix::scaled_identity(3, c), Matrix::identity(3)],
            vec![vec![0.0; 3]; 2],
            Activation::Tanh,
        )
        .unwrap();
        for mode in [CertMode::FullDiag, CertMode::ScalarLambda, CertMode::Split] {
            let b = estimate_lipschitz(&p, mode, tol);
            assert!(b >= c * (1.0 - 1e-12) && b <= c * (1.0 + tol), "{mode}: {b} vs {c}");
        }
    }
    let z = MlpParams::zeros(&[2, 4, 4, 1], Activation::Tanh).unwrap();
    assert!(estimate_lipschitz(&z, CertMode::FullDiag, 1e-3) <= 1e-3);
}

#[test]
fn norm_product_examples_and_sampling() {
    let p = MlpParams::from_layers(
        vec![Matrix::scaled_identity(2, 3.0), Matrix::scaled_identity(2, 2.0)],
        vec![vec![0.0; 2]; 2],
        Activation::Relu,
    )
    .unwrap();
    assert!((norm_product_bound(&p) - 6.0).abs() < 1e-9);
    assert_eq!(norm_product_bound(&MlpParams::zeros(&[2, 2, 2], Activation::Tanh).unwrap()), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = random_net(&mut rng, &[3, 6, 4, 2], Activation::Tanh);
    let np = norm_product_bound(&q);
    assert!(max_sampled_ratio(&q, &mut rng, 100_000) <= np);
}

#[test]
fn small_scale_forward_respects_norm_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = random_net(&mut rng, &[4, 5, 5, 3], Activation::Tanh);
    let mut p = p;
    for b in &mut p.biases {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    for t in [1e-1, 1e-3, 1e-6] {
        let q = p.with_scaled_weights(t);
        let bound = norm_product_bound(&q);
        assert!(max_sampled_ratio(&q, &mut rng, 2000) <= bound * (1.0 + 1e-9));
    }
}

#[test]
fn multipliers_from_training_shape_check() {
    let p = MlpParams::zeros(&[2, 3, 1], Activation::Tanh).unwrap();
    let bad = Multipliers::uniform(&[4], 1.0);
    assert!(check_qc(&p, &QcSpec::lipschitz(2, 1, 1.0, (0.0, 1.0)), &bad, 0.0).is_err());
}
