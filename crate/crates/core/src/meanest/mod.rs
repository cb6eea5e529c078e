//! Mean estimation with statistical queries.
//!
//! Every estimator receives an oracle for a distribution over `W` and a map
//! `W -> R^d` whose image lies in the unit ball of the target norm, and
//! returns a vector within `eps` of the mean of the image in that norm,
//! provided every answer the oracle gives is within its stated tolerance.

pub mod kashin;
mod rings;
mod rotation;

use std::sync::Mutex;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;

use crate::error::{Result, SqError};
use crate::geometry::{fwht, lp_norm, next_pow2, EllipsoidSpec};
use crate::oracle::{OracleHandle, QueryMap};

pub use kashin::KashinFrame;
pub use rings::{estimate_lq_high, estimate_lq_low, low_q_choice, LowQVariant, RingDecomposition};
pub use rotation::{estimate_l2_rotation, rotation_truncation_level, truncation_residual_sq};

/// Relative slack allowed when checking that a mapped sample lies in the
/// unit ball.
pub const SUPPORT_SLACK: f64 = 1e-9;

/// Result of a mean-estimation call.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: Vec<f64>,
    /// Error guaranteed in the target norm when all answers are valid.
    pub error_bound: f64,
    /// Number of queries issued.
    pub queries: usize,
}

/// Variant used for `l_2` estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum L2Variant {
    /// Deterministic: frame coefficients with bounded dynamic range.
    Kashin,
    /// Random rotation plus coordinate truncation, boosted to failure
    /// probability `delta`.
    Rotation { delta: f64, seed: u64 },
}

/// Records the first sample whose image leaves the declared support, so the
/// resulting contract error can say why.
pub(crate) struct SupportGuard {
    first: Mutex<Option<String>>,
}

impl SupportGuard {
    pub(crate) fn new() -> Self {
        SupportGuard { first: Mutex::new(None) }
    }

    /// Marks `out` as invalid (the oracle rejects non-finite answers) and
    /// keeps the first message.
    pub(crate) fn reject(&self, out: &mut [f64], msg: impl FnOnce() -> String) {
        out.fill(f64::NAN);
        let mut slot = self.first.lock().unwrap();
        if slot.is_none() {
            *slot = Some(msg());
        }
    }

    pub(crate) fn explain<T>(&self, r: Result<T>) -> Result<T> {
        match r {
            Err(SqError::Contract(m)) => {
                let first = self.first.lock().unwrap().clone();
                Err(SqError::Contract(first.unwrap_or(m)))
            }
            other => other,
        }
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(SqError::InvalidParameter(format!("accuracy must be positive and finite, got {eps}")));
    }
    Ok(())
}

/// `l_inf` estimation: one `STAT(eps)` query per coordinate.
pub fn estimate_linf<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    check_eps(eps)?;
    let mean = h.stat_batch(dim, map, eps)?;
    Ok(Estimate { mean, error_bound: eps, queries: dim })
}

/// `l_1` estimation through the `+-1` Hadamard embedding of `l_1^d` into
/// `l_inf^{d'}` (`d'` the next power of two): `d'` queries at tolerance
/// `eps / sqrt(d')`, which is at least `eps / sqrt(2d)`.
pub fn estimate_l1<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    check_eps(eps)?;
    let padded = next_pow2(dim);
    let root = (padded as f64).sqrt();
    let guard = SupportGuard::new();
    let q = |w: &W, out: &mut [f64]| {
        out.fill(0.0);
        map(w, &mut out[..dim]);
        let n = lp_norm(&out[..dim], 1.0);
        if !(n <= 1.0 + SUPPORT_SLACK) {
            return guard.reject(out, || format!("sample has l_1 norm {n} > 1"));
        }
        fwht(out).expect("power of two");
        out.iter_mut().for_each(|v| *v *= root);
    };
    let mut v = guard.explain(h.stat_batch(padded, &q, eps / root))?;
    fwht(&mut v).expect("power of two");
    v.truncate(dim);
    v.iter_mut().for_each(|x| *x /= root);
    Ok(Estimate { mean: v, error_bound: eps, queries: padded })
}

/// `l_2` estimation with a Kashin frame: `N` queries, one per frame
/// coefficient, at tolerance `eps / K`.
pub fn estimate_l2_kashin<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    frame: &KashinFrame,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    check_eps(eps)?;
    let d = frame.dim();
    let n = frame.size();
    let level = frame.level();
    let scale = (n as f64).sqrt() / level;
    let guard = SupportGuard::new();
    let q = |w: &W, out: &mut [f64]| {
        let mut x = vec![0.0; d];
        map(w, &mut x);
        let norm = lp_norm(&x, 2.0);
        if !(norm <= 1.0 + SUPPORT_SLACK) {
            return guard.reject(out, || format!("sample has l_2 norm {norm} > 1"));
        }
        let achieved = frame.represent_into(&x, out);
        if achieved > level {
            return guard.reject(out, || {
                SqError::Calibration { achieved, limit: level }.to_string()
            });
        }
        out.iter_mut().for_each(|v| *v *= scale);
    };
    let v = guard.explain(h.stat_batch(n, &q, eps / level))?;
    let coef: Vec<f64> = v.iter().map(|x| x / scale).collect();
    Ok(Estimate { mean: frame.synthesize(&coef), error_bound: eps, queries: n })
}

pub fn estimate_l2<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    map: QueryMap<'_, W>,
    eps: f64,
    variant: L2Variant,
) -> Result<Estimate> {
    match variant {
        L2Variant::Kashin => estimate_l2_kashin(h, &*KashinFrame::shared(dim)?, map, eps),
        L2Variant::Rotation { delta, seed } => estimate_l2_rotation(h, dim, map, eps, delta, seed),
    }
}

/// Dispatches on `q`: `l_1`, `l_q` for `1 < q < 2`, Kashin `l_2`, `l_q` for
/// `q > 2`, or `l_inf`.
pub fn estimate_lq<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    dim: usize,
    q: f64,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    if q == 1.0 {
        estimate_l1(h, dim, map, eps)
    } else if q > 1.0 && q < 2.0 {
        estimate_lq_low(h, dim, q, map, eps, LowQVariant::Auto)
    } else if q == 2.0 {
        estimate_l2(h, dim, map, eps, L2Variant::Kashin)
    } else if q.is_infinite() {
        estimate_linf(h, dim, map, eps)
    } else if q > 2.0 {
        estimate_lq_high(h, dim, q, map, eps)
    } else {
        Err(SqError::InvalidParameter(format!("norm exponent must be >= 1, got {q}")))
    }
}

/// Estimation in the gauge norm of an ellipsoid `E`: whiten, estimate in
/// `l_2`, map back. The error satisfies `||L^{-1}(est - mean)||_2 <= eps`.
pub fn estimate_ellipsoidal<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    ell: &EllipsoidSpec,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    let d = ell.dim();
    let whitened = |w: &W, out: &mut [f64]| {
        let mut x = vec![0.0; d];
        map(w, &mut x);
        out.copy_from_slice(&ell.whiten(&x));
    };
    let est = estimate_l2_kashin(h, &*KashinFrame::shared(d)?, &whitened, eps)?;
    Ok(Estimate { mean: ell.unwhiten(&est.mean), ..est })
}

/// Origin-symmetric polytope `{x : |<t_i, x>| <= 1 for all i}`; its gauge is
/// `||T x||_inf`.
#[derive(Debug, Clone)]
pub struct SymmetricPolytope {
    pub facets: DMatrix<f64>,
}

impl SymmetricPolytope {
    pub fn new(facets: DMatrix<f64>) -> Self {
        SymmetricPolytope { facets }
    }

    pub fn gauge(&self, x: &[f64]) -> f64 {
        (&self.facets * nalgebra::DVector::from_column_slice(x)).amax()
    }
}

/// Estimation in a polytope gauge: one `STAT(eps/2)` query per facet pair,
/// then a Chebyshev fit `min_x ||answers - T x||_inf` by linear programming.
pub fn estimate_polytope<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    poly: &SymmetricPolytope,
    map: QueryMap<'_, W>,
    eps: f64,
) -> Result<Estimate> {
    check_eps(eps)?;
    let (m, d) = poly.facets.shape();
    let q = |w: &W, out: &mut [f64]| {
        let mut x = vec![0.0; d];
        map(w, &mut x);
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|j| poly.facets[(i, j)] * x[j]).sum();
        }
    };
    let v = h.stat_batch(m, &q, eps / 2.0)?;

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let xs: Vec<_> = (0..d).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let s = lp.add_var(1.0, (0.0, f64::INFINITY));
    for i in 0..m {
        let mut row: Vec<_> = xs.iter().enumerate().map(|(j, &x)| (x, poly.facets[(i, j)])).collect();
        row.push((s, 1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, v[i]);
        let mut row: Vec<_> = xs.iter().enumerate().map(|(j, &x)| (x, -poly.facets[(i, j)])).collect();
        row.push((s, 1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, -v[i]);
    }
    let sol = lp.solve().map_err(|e| SqError::Numeric { message: format!("Chebyshev fit: {e}"), residual: f64::NAN })?;
    let mean: Vec<f64> = xs.iter().map(|&x| sol[x]).collect();
    Ok(Estimate { mean, error_bound: eps, queries: m })
}
