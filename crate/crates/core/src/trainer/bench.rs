//! Timing of the blocked barrier evaluation against the dense one.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lipschitz::{
    barrier_loss_and_grads, barrier_loss_and_grads_dense, feasible_init, BarrierEval,
    LipschitzError, LipschitzTarget, Multipliers,
};
use crate::nn::{Activation, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub reps: usize,
    pub seed: u64,
    pub lipschitz: f64,
    pub rho: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reps: 20,
            seed: 0,
            lipschitz: 10.0,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub depth: usize,
    pub width: usize,
    pub reps: usize,
    pub blocked_median_s: f64,
    pub dense_median_s: f64,
    /// `dense_median_s / blocked_median_s`.
    pub speedup: f64,
    pub value_diff: f64,
    /// Largest gradient difference relative to the largest dense gradient entry.
    pub grad_rel_diff: f64,
}

pub const BENCH_HEADER: &str =
    "depth,width,reps,blocked_median_s,dense_median_s,speedup,value_diff,grad_rel_diff";

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn grad_rel_diff(a: &BarrierEval, b: &BarrierEval) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.grad_weights.iter().zip(&b.grad_weights) {
        diff = diff.max(x.sub(y).max_abs());
        scale = scale.max(y.max_abs());
    }
    for (x, y) in a.grad_lambdas.iter().flatten().zip(b.grad_lambdas.iter().flatten()) {
        diff = diff.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    diff / scale.max(f64::MIN_POSITIVE)
}

/// For each `(depth, width)`, a network with `depth` hidden layers of `width` units (and
/// input/output width `width`) is scaled to feasibility and both barrier paths are timed.
pub fn bench_barrier(
    cfg: &BenchConfig,
    sizes: &[(usize, usize)],
) -> Result<Vec<BenchRow>, LipschitzError> {
    assert!(cfg.reps >= 1, "at least one repetition");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = LipschitzTarget::new(cfg.lipschitz)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &(depth, width) in sizes {
        let dims = vec![width; depth + 2];
        let p = MlpParams::glorot(&dims, Activation::Tanh, &mut rng)
            .map_err(|e| LipschitzError::ShapeMismatch(e.to_string()))?;
        let m = Multipliers::identity_for(&p);
        let p = feasible_init(&p, &m, target, 1e-6)?;

        let blocked = barrier_loss_and_grads(&p, &m, target, cfg.rho)?;
        let dense = barrier_loss_and_grads_dense(&p, &m, target, cfg.rho)?;
        let mut tb = Vec::with_capacity(cfg.reps);
        let mut td = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let t = Instant::now();
            std::hint::black_box(barrier_loss_and_grads(&p, &m, target, cfg.rho)?);
            tb.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            std::hint::black_box(barrier_loss_and_grads_dense(&p, &m, target, cfg.rho)?);
            td.push(t.elapsed().as_secs_f64());
        }
        let (b, d) = (median(tb), median(td));
        rows.push(BenchRow {
            depth,
            width,
            reps: cfg.reps,
            blocked_median_s: b,
            dense_median_s: d,
            speedup: d / b,
            value_diff: (blocked.value - dense.value).abs(),
            grad_rel_diff: grad_rel_diff(&blocked, &dense),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:e},{:e},{},{:e},{:e}",
            r.depth,
            r.width,
            r.reps,
            r.blocked_median_s,
            r.dense_median_s,
            r.speedup,
            r.value_diff,
            r.grad_rel_diff
        );
    }
    out
}

/// Parses `d1xw1,d2xw2,...`.
pub fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>, String> {
    s.split(',')
        .map(|item| {
            let (d, w) = item
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| format!("size `{item}` is not of the form DEPTHxWIDTH"))?;
            let d: usize = d.trim().parse().map_err(|e| format!("depth in `{item}`: {e}"))?;
            let w: usize = w.trim().parse().map_err(|e| format!("width in `{item}`: {e}"))?;
            if d == 0 || w == 0 {
                return Err(format!("size `{item}` must be positive"));
            }
            Ok((d, w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_size_agrees() {
        let rows = bench_barrier(&BenchConfig { reps: 3, ..Default::default() }, &[(1, 2)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].value_diff <= 1e-9);
        assert!(rows[0].grad_rel_diff <= 1e-9);
        assert_eq!(bench_csv(&rows).lines().count(), 2);
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_sizes("10x64, 2X8").unwrap(), vec![(10, 64), (2, 8)]);
        assert!(parse_sizes("10").is_err());
        assert!(parse_sizes("0x4").is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
