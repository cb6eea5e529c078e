//! `l_q` estimation for `q != 2` by splitting samples into dyadic rings of
//! coordinates with bounded dynamic range.

use crate::error::{Result, SqError};
use crate::geometry::{conjugate, lp_norm};
use crate::oracle::{OracleHandle, QueryMap};

use super::{check_eps, estimate_l2_kashin, Estimate, KashinFrame, SupportGuard, SUPPORT_SLACK};

/// Partition of coordinates by magnitude. Ring `j` (for `0 <= j <= k`) keeps
/// coordinates with `2^{-(j+1)} < |x_i| <= 2^{-j}`; the tail keeps those with
/// `|x_i| <= 2^{-(k+1)}`, where `k = floor(log2(d) / q) - 2`. When `k < 0`
/// there are no rings and the tail holds every coordinate of a unit-norm
/// vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingDecomposition {
    pub dim: usize,
    pub q: f64,
    pub top: i64,
}

impl RingDecomposition {
    pub fn new(dim: usize, q: f64) -> Self {
        let top = ((dim.max(1) as f64).log2() / q).floor() as i64 - 2;
        RingDecomposition { dim, q, top }
    }

    pub fn ring_count(&self) -> usize {
        (self.top + 1).max(0) as usize
    }

    /// Magnitude bound on tail coordinates (capped at one).
    pub fn tail_threshold(&self) -> f64 {
        if self.top < 0 {
            1.0
        } else {
            2f64.powi(-(self.top as i32 + 1))
        }
    }

    /// `(lower, upper]` magnitude interval of ring `j`.
    pub fn ring_bounds(&self, j: usize) -> (f64, f64) {
        (2f64.powi(-(j as i32 + 1)), 2f64.powi(-(j as i32)))
    }

    pub fn ring(&self, x: &[f64], j: usize, out: &mut [f64]) {
        let (lo, hi) = self.ring_bounds(j);
        for (o, &v) in out.iter_mut().zip(x) {
            *o = if v.abs() > lo && v.abs() <= hi { v } else { 0.0 };
        }
    }

    pub fn tail(&self, x: &[f64], out: &mut [f64]) {
        let t = self.tail_threshold();
        for (o, &v) in out.iter_mut().zip(x) {
            *o = if v.abs() <= t { v } else { 0.0 };
        }
    }

    /// All rings followed by the tail.
    pub fn split(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let rings = (0..self.ring_count())
            .map(|j| {
                let mut r = vec![0.0; x.len()];
                self.ring(x, j, &mut r);
                r
            })
            .collect();
        let mut t = vec![0.0; x.len()];
        self.tail(x, &mut t);
        (rings, t)
    }
}

fn mapped_checked<W>(map: QueryMap<'_, W>, w: &W, q: f64, guard: &SupportGuard, out: &mut [f64], x: &mut [f64]) -> bool {
    map(w, x);
    let n = lp_norm(x, q);
    if !(n <= 1.0 + SUPPORT_SLACK) {
        guard.reject(out, || format!("sample has l_{q} norm {n} > 1"));
        return false;
    }
    true
}

/// `l_q` estimation for `2 < q < inf`. Each ring is estimated twice, in
/// `l_2` through a Kashin frame and in `l_inf` coordinate-wise, and the
/// `l_2` estimate is clamped into the `l_inf` box; tail coordinates are
/// estimated directly. Uses `(k+1)(N + d) + d` `STAT` queries.
pub fn estimate_lq_high<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    q: f64,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    check_eps(eps)?;
    if !(q > 2.0) || q.is_infinite() {
        return Err(SqError::InvalidParameter(format!("expected 2 < q < inf, got {q}")));
    }
    let rings = RingDecomposition::new(dim, q);
    let guard = SupportGuard::new();
    let mut mean = vec![0.0; dim];
    let mut queries = 0;
    let count = rings.ring_count();
    if count > 0 {
        let frame = KashinFrame::shared(dim)?;
        let eps_ring = 2f64.powf(2.0 / q - 3.0) * eps / count as f64;
        for j in 0..count {
            let l2_scale = 2f64.powf((q / 2.0 - 1.0) * (j as f64 + 1.0));
            let box_scale = 2f64.powi(-(j as i32));
            let l2_map = |w: &W, out: &mut [f64]| {
                let mut x = vec![0.0; dim];
                if mapped_checked(map, w, q, &guard, out, &mut x) {
                    rings.ring(&x, j, out);
                    out.iter_mut().for_each(|v| *v /= l2_scale);
                }
            };
            let l2 = guard.explain(estimate_l2_kashin(h, &frame, &l2_map, eps_ring))?;
            let box_map = |w: &W, out: &mut [f64]| {
                let mut x = vec![0.0; dim];
                if mapped_checked(map, w, q, &guard, out, &mut x) {
                    rings.ring(&x, j, out);
                    out.iter_mut().for_each(|v| *v /= box_scale);
                }
            };
            let centre = guard.explain(h.stat_batch(dim, &box_map, eps_ring))?;
            queries += l2.queries + dim;
            let half = box_scale * eps_ring;
            for i in 0..dim {
                let c = box_scale * centre[i];
                mean[i] += (l2_scale * l2.mean[i]).clamp(c - half, c + half);
            }
        }
    }
    let t = rings.tail_threshold();
    let tail_tol = eps / (2.0 * (dim as f64).powf(1.0 / q) * t);
    let tail_map = |w: &W, out: &mut [f64]| {
        let mut x = vec![0.0; dim];
        if mapped_checked(map, w, q, &guard, out, &mut x) {
            rings.tail(&x, out);
            out.iter_mut().for_each(|v| *v /= t);
        }
    };
    let tail = guard.explain(h.stat_batch(dim, &tail_map, tail_tol))?;
    queries += dim;
    mean.iter_mut().zip(&tail).for_each(|(m, v)| *m += t * v);
    Ok(Estimate { mean, error_bound: eps, queries })
}

/// Strategy for `1 < q < 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowQVariant {
    /// Kashin `l_2` estimation at error `eps * d^{1/2 - 1/q}`.
    ViaL2,
    /// Signed rings answered coordinate-wise by `VSTAT` with small answers
    /// zeroed.
    VstatRings,
    /// Whichever of the two needs the smaller estimation complexity.
    Auto,
}

struct LowQPlan {
    rings: RingDecomposition,
    eps_ring: f64,
    ring_n: f64,
    tail_n: f64,
}

fn low_q_plan(dim: usize, q: f64, eps: f64) -> LowQPlan {
    let mut rings = RingDecomposition::new(dim, q);
    rings.top = rings.top.max(-1);
    let p = conjugate(q);
    let eps_ring = eps / (2.0 * rings.ring_count() as f64 + 1.0);
    let ring_n = (8.0 / eps_ring).powf(p).ceil();
    let t = rings.tail_threshold();
    let tail_n = (t * (dim as f64).powf(1.0 / q) / eps_ring).powi(2).ceil().max(4.0);
    LowQPlan { rings, eps_ring, ring_n, tail_n }
}

/// The variant [`LowQVariant::Auto`] runs: Kashin `l_2` estimation when its
/// estimation complexity `(K / (eps d^{1/2 - 1/q}))^2` is at most that of the
/// `VSTAT` rings.
pub fn low_q_choice(dim: usize, q: f64, eps: f64) -> Result<LowQVariant> {
    let frame = KashinFrame::shared(dim)?;
    let l2_cost = (frame.level() / (eps * (dim as f64).powf(0.5 - 1.0 / q))).powi(2);
    let plan = low_q_plan(dim, q, eps);
    Ok(if l2_cost <= plan.ring_n.max(plan.tail_n) { LowQVariant::ViaL2 } else { LowQVariant::VstatRings })
}

/// `l_q` estimation for `1 < q < 2`.
pub fn estimate_lq_low<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    q: f64,
    map: QueryMap<'_, W>,
    eps: f64,
    variant: LowQVariant,
) -> Result<Estimate> {
    check_eps(eps)?;
    if !(q > 1.0 && q < 2.0) {
        return Err(SqError::InvalidParameter(format!("expected 1 < q < 2, got {q}")));
    }
    let l2_eps = eps * (dim as f64).powf(0.5 - 1.0 / q);
    let variant = match variant {
        LowQVariant::Auto => low_q_choice(dim, q, eps)?,
        v => v,
    };
    let guard = SupportGuard::new();
    match variant {
        LowQVariant::ViaL2 => {
            let m = |w: &W, out: &mut [f64]| {
                let mut x = vec![0.0; dim];
                if mapped_checked(map, w, q, &guard, out, &mut x) {
                    out.copy_from_slice(&x);
                }
            };
            let e = guard.explain(estimate_l2_kashin(h, &*KashinFrame::shared(dim)?, &m, l2_eps))?;
            Ok(Estimate { error_bound: eps, ..e })
        }
        _ => {
            let plan = low_q_plan(dim, q, eps);
            let rings = plan.rings;
            let mut mean = vec![0.0; dim];
            let mut queries = 0;
            let cutoff = 2.0 / plan.ring_n;
            for j in 0..rings.ring_count() {
                let scale = 2f64.powi(j as i32);
                for sign in [1.0, -1.0] {
                    let part = |w: &W, out: &mut [f64]| {
                        let mut x = vec![0.0; dim];
                        if mapped_checked(map, w, q, &guard, out, &mut x) {
                            x.iter_mut().for_each(|v| *v = (sign * *v).max(0.0));
                            rings.ring(&x, j, out);
                            out.iter_mut().for_each(|v| *v *= scale);
                        }
                    };
                    let v = guard.explain(h.vstat_batch(dim, &part, plan.ring_n))?;
                    queries += dim;
                    for (m, a) in mean.iter_mut().zip(&v) {
                        if *a >= cutoff {
                            *m += sign * a / scale;
                        }
                    }
                }
            }
            let t = rings.tail_threshold();
            let tail = |w: &W, out: &mut [f64]| {
                let mut x = vec![0.0; dim];
                if mapped_checked(map, w, q, &guard, out, &mut x) {
                    rings.tail(&x, out);
                    out.iter_mut().for_each(|v| *v = (*v / t + 1.0) / 2.0);
                }
            };
            let v = guard.explain(h.vstat_batch(dim, &tail, plan.tail_n))?;
            queries += dim;
            mean.iter_mut().zip(&v).for_each(|(m, a)| *m += t * (2.0 * a - 1.0));
            debug_assert!(plan.eps_ring > 0.0);
            Ok(Estimate { mean, error_bound: eps, queries })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_counts() {
        assert_eq!(RingDecomposition::new(256, 4.0).top, 0);
        assert_eq!(RingDecomposition::new(64, 4.0).ring_count(), 0);
        assert_eq!(RingDecomposition::new(64, 4.0).tail_threshold(), 1.0);
        assert_eq!(RingDecomposition::new(256, 1.5).top, 3);
    }

    #[test]
    fn rings_partition_unit_vectors() {
        let r = RingDecomposition::new(1 << 12, 3.0);
        let x = [0.9, -0.5, 0.3, 0.01, -0.2, 0.0];
        let (parts, tail) = r.split(&x);
        for i in 0..x.len() {
            let s: f64 = parts.iter().map(|p| p[i]).sum::<f64>() + tail[i];
            assert_eq!(s, x[i]);
            let hits = parts.iter().filter(|p| p[i] != 0.0).count() + usize::from(tail[i] != 0.0);
            assert!(hits <= 1);
        }
    }
}
