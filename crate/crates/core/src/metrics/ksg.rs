//! Kraskov–Stögbauer–Grassberger mutual information, first estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::digamma;

use crate::error::{shape_err, Error, Result};

/// Neighbour count used throughout.
pub const KSG_K: usize = 3;
/// Relative scale of the tie-breaking jitter.
const JITTER: f64 = 1e-10;
const JITTER_SEED: u64 = 0x6b73_675f_6a69_7474;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    /// Raw estimate in nats; may be slightly negative.
    pub nats: f64,
    /// Set when either input is constant; `nats` is then 0.
    pub degenerate: bool,
}

impl MiEstimate {
    /// Estimate clamped at zero.
    pub fn clamped(&self) -> f64 {
        self.nats.max(0.0)
    }
}

fn prepare(v: &[f64], rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return None;
    }
    // unit scale so the max-norm treats both coordinates alike
    Some(v.iter().map(|x| (x - mean) / sd + JITTER * (rng.random::<f64>() - 0.5)).collect())
}

/// Number of entries of the ascending slice `sorted` strictly within `eps` of `v`, excluding one self-match.
fn count_within(sorted: &[f64], v: f64, eps: f64) -> usize {
    // differences, not shifted bounds, so the neighbour that set eps compares exactly
    let lo = sorted.partition_point(|&x| v - x >= eps);
    let hi = sorted.partition_point(|&x| x - v < eps);
    hi - lo - 1
}

/// `I(a; b)` with `k` neighbours under the max-norm.
pub fn ksg_mi(a: &[f64], b: &[f64], k: usize) -> Result<MiEstimate> {
    if a.len() != b.len() {
        return shape_err(format!("ksg: {} vs {} samples", a.len(), b.len()));
    }
    if k == 0 {
        return Err(Error::Config("ksg needs k >= 1".into()));
    }
    let n = a.len();
    if n < k + 2 {
        return shape_err(format!("ksg needs at least {} samples, got {n}", k + 2));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("ksg input contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
    let (Some(x), Some(y)) = (prepare(a, &mut rng), prepare(b, &mut rng)) else {
        return Ok(MiEstimate { nats: 0.0, degenerate: true });
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys_by_x: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut ys = y.clone();
    ys.sort_by(f64::total_cmp);

    let mut acc = 0.0;
    let mut best = Vec::with_capacity(k + 1);
    for p in 0..n {
        // k nearest in the joint max-norm, scanning outward along sorted x
        best.clear();
        let kth = |best: &Vec<f64>| {
            if best.len() < k {
                f64::INFINITY
            } else {
                best[k - 1]
            }
        };
        let (mut lo, mut hi) = (p, p + 1);
        loop {
            let left = (lo > 0).then(|| xs[p] - xs[lo - 1]);
            let right = (hi < n).then(|| xs[hi] - xs[p]);
            let (q, dx) = match (left, right) {
                (Some(l), Some(r)) if l <= r => (lo - 1, l),
                (Some(l), None) => (lo - 1, l),
                (_, Some(r)) => (hi, r),
                (None, None) => break,
            };
            if dx >= kth(&best) {
                break;
            }
            if q < p {
                lo -= 1;
            } else {
                hi += 1;
            }
            let d = dx.max((ys_by_x[q] - ys_by_x[p]).abs());
            let pos = best.partition_point(|&v| v < d);
            if pos < k {
                best.insert(pos, d);
                best.truncate(k);
            }
        }
        let eps = kth(&best);
        let nx = count_within(&xs, xs[p], eps);
        let ny = count_within(&ys, ys_by_x[p], eps);
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    let nats = digamma(k as f64) + digamma(n as f64) - acc / n as f64;
    Ok(MiEstimate { nats, degenerate: false })
}
