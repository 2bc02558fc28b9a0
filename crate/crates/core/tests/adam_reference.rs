use lipbarrier::optim::{adam_step, AdamConfig, AdamState};

/// Adam written out per coordinate with explicit powers of the decay rates.
fn reference(params: &mut [f64], grads_at: impl Fn(usize, &[f64]) -> Vec<f64>, steps: usize) {
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let n = params.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    for t in 1..=steps {
        let g = grads_at(t, params);
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - f64::powi(b1, t as i32));
            let vh = v[i] / (1.0 - f64::powi(b2, t as i32));
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn toy_grads(t: usize, p: &[f64]) -> Vec<f64> {
    // Gradient of a tilted quadratic plus a deterministic wobble.
    vec![
        2.0 * p[0] - 1.0 + 0.1 * (t as f64).sin(),
        0.5 * p[1] + p[2],
        -3.0 + p[2] * p[2],
    ]
}

#[test]
fn matches_reference_recursion_over_100_steps() {
    let start = [0.3, -1.2, 2.0];
    let mut expected = start;
    reference(&mut expected, toy_grads, 100);

    let cfg = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(3, cfg);
    let mut got = start.to_vec();
    for t in 1..=100 {
        let g = toy_grads(t, &got);
        state.step(&mut got, &g, cfg.lr);
    }
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    // The functional form agrees with the in-place one.
    let mut s = AdamState::new(3, cfg);
    let mut q = start.to_vec();
    for t in 1..=100 {
        let g = toy_grads(t, &q);
        let (next, stepped) = adam_step(&s, &q, &g, cfg.lr);
        s = next;
        q = stepped;
    }
    assert_eq!(q, got);
}
