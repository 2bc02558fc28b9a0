use lipbarrier::certify::{estimate_lipschitz, CertMode};
use lipbarrier::lipschitz::{bound_at_multipliers, is_feasible, LipschitzTarget};
use lipbarrier::nn::{forward, Sample};
use lipbarrier::trainer::{
    bench_barrier, gen_blobs_2d, train, BenchConfig, Dataset, Split, TrainConfig, TrainMode,
    METRICS_HEADER,
};

fn quick(mode: TrainMode, lipschitz: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        dims: vec![2, 8, 8, 3],
        mode,
        lipschitz,
        epochs,
        certify: vec![CertMode::FullDiag, CertMode::ScalarLambda],
        ..TrainConfig::default()
    }
}

#[test]
fn nominal_training_separates_two_points() {
    let mut data = Dataset::default();
    data.push(Sample::labeled(vec![-1.0, 0.5], 0), Split::Train);
    data.push(Sample::labeled(vec![1.0, -0.5], 1), Split::Train);
    let cfg = TrainConfig {
        dims: vec![2, 4, 2],
        mode: TrainMode::Nominal,
        epochs: 200,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let (p, _, metrics) = train(&cfg, &data).unwrap();
    let a = forward(&p, &[-1.0, 0.5]).unwrap();
    let b = forward(&p, &[1.0, -0.5]).unwrap();
    assert!(a[0] > a[1] && b[1] > b[0], "{a:?} {b:?}");
    assert!(metrics.final_epoch().unwrap().task_loss < 0.05);
    assert!(metrics.epochs.iter().all(|e| e.barrier.is_none()));
}

#[test]
fn runs_are_deterministic() {
    let data = gen_blobs_2d(60, 30, 1);
    let cfg = quick(TrainMode::BarrierBilinear, 5.0, 5);
    let (p1, m1, r1) = train(&cfg, &data).unwrap();
    let (p2, m2, r2) = train(&cfg, &data).unwrap();
    assert_eq!(r1.to_csv(), r2.to_csv());
    assert!(r1.to_csv().starts_with(METRICS_HEADER));
    assert_eq!((p1, m1), (p2, m2));
}

#[test]
fn barrier_training_keeps_certificate() {
    let data = gen_blobs_2d(90, 60, 2);
    for mode in [TrainMode::BarrierBilinear, TrainMode::BarrierLinear] {
        let l = 3.0;
        let (p, m, r) = train(&quick(mode, l, 20), &data).unwrap();
        let target = LipschitzTarget::new(l).unwrap();
        assert!(is_feasible(&p, &m, target, 0.0));
        assert!(bound_at_multipliers(&p, &m).unwrap() <= l * (1.0 + 1e-12));
        for e in &r.epochs {
            assert!(e.feasible);
            assert!(e.multiplier_bound.unwrap() <= l * (1.0 + 1e-12));
        }
        let full = r.certified_bound(CertMode::FullDiag).unwrap();
        assert!(full <= l * (1.0 + 1e-3));
        assert!((full - estimate_lipschitz(&p, CertMode::FullDiag, 1e-3)).abs() <= 1e-9 * full);
        assert!(full <= r.certified_bound(CertMode::ScalarLambda).unwrap() * (1.0 + 1e-3));
    }
}

#[test]
fn nominal_bound_exceeds_barrier_bound() {
    let data = gen_blobs_2d(90, 60, 3);
    let (_, _, nominal) = train(&quick(TrainMode::Nominal, 2.0, 40), &data).unwrap();
    let (_, _, barrier) = train(&quick(TrainMode::BarrierBilinear, 2.0, 40), &data).unwrap();
    let n = nominal.certified_bound(CertMode::FullDiag).unwrap();
    let b = barrier.certified_bound(CertMode::FullDiag).unwrap();
    assert!(b <= 2.0 * (1.0 + 1e-3) && n > b, "nominal {n} barrier {b}");
}

#[test]
fn infeasible_target_is_reported() {
    let data = gen_blobs_2d(10, 5, 0);
    let err = train(&quick(TrainMode::BarrierBilinear, 1e-9, 1), &data).unwrap_err();
    assert!(err.is_init_failure());
    let mut bad = quick(TrainMode::Nominal, 1.0, 1);
    bad.dims = vec![3, 4, 3];
    assert!(!train(&bad, &data).unwrap_err().is_init_failure());
}

#[test]
fn blocked_and_dense_barriers_agree() {
    let cfg = BenchConfig {
        reps: 2,
        ..BenchConfig::default()
    };
    let rows = bench_barrier(&cfg, &[(2, 8), (4, 16)]).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.value_diff <= 1e-9, "{r:?}");
        assert!(r.grad_rel_diff <= 1e-9, "{r:?}");
        assert!(r.blocked_median_s > 0.0 && r.dense_median_s > 0.0);
    }
}
