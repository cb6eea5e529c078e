//! `l_2` estimation by random rotation and coordinate truncation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SqError};
use crate::geometry::{lp_norm, random_orthogonal};
use crate::oracle::{OracleHandle, QueryMap};

use super::{check_eps, Estimate, SupportGuard, SUPPORT_SLACK};

/// Per-repetition failure probability before boosting.
const BASE_FAILURE: f64 = 0.125;

/// Truncation level `a = sqrt(2 ln(16 / (delta eps^2)) / d)` at which the
/// expected squared truncation residual of a rotated unit vector is small
/// enough for accuracy `eps` with probability `1 - delta`.
pub fn rotation_truncation_level(dim: usize, eps: f64, delta: f64) -> f64 {
    (2.0 * (16.0 / (delta * eps * eps)).ln() / dim as f64).sqrt()
}

/// `||U w - clamp(U w, -a, a)||_2^2`.
pub fn truncation_residual_sq(rotation: &DMatrix<f64>, w: &[f64], a: f64) -> f64 {
    let y = rotation * DVector::from_column_slice(w);
    y.iter().map(|v| (v.abs() - a).max(0.0).powi(2)).sum()
}

/// Number of independent repetitions so that more than half succeed with
/// probability at least `1 - delta` (Hoeffding), rounded up to an odd number.
fn repetitions(delta: f64) -> usize {
    if delta >= BASE_FAILURE {
        return 1;
    }
    let gap = 0.5 - BASE_FAILURE;
    let k = ((1.0 / delta).ln() / (2.0 * gap * gap)).ceil() as usize;
    k | 1
}

/// Index of the point whose median distance to the other points is
/// smallest. If more than half the points lie within `r` of some target,
/// the selected point lies within `3r` of it.
fn median_selection(points: &[Vec<f64>]) -> usize {
    if points.len() <= 2 {
        return 0;
    }
    let mut best = (f64::INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, o)| lp_norm(&p.iter().zip(o).map(|(a, b)| a - b).collect::<Vec<_>>(), 2.0))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = dists[(dists.len() + 1) / 2 - 1];
        if med < best.0 {
            best = (med, i);
        }
    }
    best.1
}

/// Randomised `l_2` estimation: each repetition draws a Haar rotation `U`,
/// queries the truncated coordinates of `U x` at tolerance
/// `eps' / (2 sqrt(d) a)` with `eps' = eps/3`, and rotates back; the
/// repetitions are combined by median selection. Succeeds with probability
/// at least `1 - delta` over the rotations, using `reps * d` queries.
pub fn estimate_l2_rotation<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    map: QueryMap<'_, W>,
    eps: f64,
    delta: f64,
    seed: u64,
) -> Result<Estimate> {
    check_eps(eps)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SqError::InvalidParameter(format!("failure probability must lie in (0, 1), got {delta}")));
    }
    let inner = eps / 3.0;
    let a = rotation_truncation_level(dim, inner, BASE_FAILURE);
    let tol = inner / (2.0 * (dim as f64).sqrt() * a);
    let reps = repetitions(delta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guard = SupportGuard::new();
    let mut points = Vec::with_capacity(reps);
    for _ in 0..reps {
        let u = random_orthogonal(dim, &mut rng);
        let q = |w: &W, out: &mut [f64]| {
            let mut x = vec![0.0; dim];
            map(w, &mut x);
            let n = lp_norm(&x, 2.0);
            if !(n <= 1.0 + SUPPORT_SLACK) {
                return guard.reject(out, || format!("sample has l_2 norm {n} > 1"));
            }
            let y = &u * DVector::from_vec(x);
            for (o, v) in out.iter_mut().zip(y.iter()) {
                *o = v.clamp(-a, a) / a;
            }
        };
        let v = guard.explain(h.stat_batch(dim, &q, tol))?;
        let back = u.transpose() * DVector::from_iterator(dim, v.iter().map(|x| x * a));
        points.push(back.iter().copied().collect::<Vec<f64>>());
    }
    let pick = median_selection(&points);
    Ok(Estimate { mean: points.swap_remove(pick), error_bound: eps, queries: reps * dim })
}
