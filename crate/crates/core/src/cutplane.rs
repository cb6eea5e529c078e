//! Optimization of bounded-range convex objectives that need not be
//! Lipschitz, over bodies given by membership.
//!
//! Two methods are provided. [`cog_optimize`] is an approximate
//! centre-of-gravity method: every round samples the current localizer with
//! hit-and-run, estimates its centroid and inertial ellipsoid, estimates the
//! gradient at the centroid in the dual norm of that ellipsoid (which turns
//! an ellipsoidal error into an error uniform over the localizer) and cuts.
//! [`anneal_optimize`] samples from `exp(-alpha F)` using only approximate
//! function values.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, Result, SqError};
use crate::firstorder::Objective;
use crate::geometry::{dot, lp_norm, EllipsoidSpec};
use crate::meanest::estimate_ellipsoidal;
use crate::oracle::OracleHandle;

/// Accuracy of chord endpoints found by bisection.
pub const CHORD_TOLERANCE: f64 = 1e-9;

/// Slack in the approximate-centroid volume guarantee: cutting within this
/// inertial-norm distance of the centroid removes at least a third of the
/// volume.
pub const CENTROID_SLACK: f64 = 1.0 / std::f64::consts::E - 1.0 / 3.0;

/// Ball certificate `center + inner B_2 ⊆ K ⊆ center + outer B_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

/// Convex body given by a membership oracle and a sandwich certificate.
pub trait ConvexBody: Send + Sync {
    fn dim(&self) -> usize;

    fn contains(&self, x: &[f64]) -> bool;

    fn sandwich(&self) -> Sandwich;

    /// Interval `[lo, hi]` of `t` with `x + t u` in the body, for `x` inside.
    fn chord(&self, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        bisection_chord(self, x, u)
    }

    /// Largest `r` such that `x + r L B_2` lies in the body, or a lower bound
    /// on it. `None` if the body cannot compute one.
    fn inscribed_scale(&self, _x: &[f64], _factor: &DMatrix<f64>) -> Option<f64> {
        None
    }
}

/// Chord by bisection on membership, bracketed by the outer radius.
pub fn bisection_chord<B: ConvexBody + ?Sized>(body: &B, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    if !body.contains(x) {
        return Err(SqError::Geometry("chord requested from a point outside the body".into()));
    }
    let s = body.sandwich();
    let un = lp_norm(u, 2.0);
    if !(un > 0.0) {
        return Err(SqError::Geometry("zero chord direction".into()));
    }
    let reach = (lp_norm(&crate::geometry::sub(x, &s.center), 2.0) + s.outer) / un * (1.0 + 1e-9) + 1e-12;
    let at = |t: f64| -> Vec<f64> { x.iter().zip(u).map(|(a, b)| a + t * b).collect() };
    let mut ends = [0.0; 2];
    for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
        if body.contains(&at(sign * reach)) {
            return Err(SqError::Geometry("membership bisection failed to bracket the boundary".into()));
        }
        let (mut inside, mut outside) = (0.0, reach);
        while (outside - inside) > CHORD_TOLERANCE * reach.max(1.0) {
            let mid = 0.5 * (inside + outside);
            if body.contains(&at(sign * mid)) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        ends[k] = sign * inside;
    }
    Ok((ends[0], ends[1]))
}

/// Euclidean ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallBody {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ConvexBody for BallBody {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn contains(&self, x: &[f64]) -> bool {
        lp_norm(&crate::geometry::sub(x, &self.center), 2.0) <= self.radius
    }

    fn sandwich(&self) -> Sandwich {
        Sandwich { center: self.center.clone(), inner: self.radius, outer: self.radius }
    }

    fn chord(&self, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let v = crate::geometry::sub(x, &self.center);
        let a = dot(u, u);
        let b = dot(&v, u);
        let c = dot(&v, &v) - self.radius * self.radius;
        let disc = (b * b - a * c).max(0.0);
        if !(a > 0.0) {
            return Err(SqError::Geometry("zero chord direction".into()));
        }
        let r = disc.sqrt();
        let lo = (-b - r) / a;
        let hi = (-b + r) / a;
        Ok((lo.min(0.0), hi.max(0.0)))
    }

    fn inscribed_scale(&self, x: &[f64], factor: &DMatrix<f64>) -> Option<f64> {
        let v = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| a - c));
        if v.norm() >= self.radius {
            return Some(0.0);
        }
        let gram = (factor.transpose() * factor).symmetric_eigen();
        let proj = gram.eigenvectors.transpose() * (factor.transpose() * &v);
        let lam: Vec<f64> = gram.eigenvalues.iter().copied().collect();
        let b: Vec<f64> = proj.iter().copied().collect();
        let vv = v.norm_squared();
        let sigma_min = lam.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0).sqrt();
        let (mut lo, mut hi) = (0.0, self.radius / sigma_min.max(1e-300));
        for _ in 0..100 {
            let r = 0.5 * (lo + hi);
            if max_sq_over_ball(vv, &lam, &b, r) <= self.radius * self.radius {
                lo = r;
            } else {
                hi = r;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Some(lo)
    }
}

/// `max_{||u|| <= 1} ||v + r L u||^2` given `||v||^2`, the eigenvalues `lam`
/// of `L^T L` and the coordinates `b` of `L^T v` in its eigenbasis. The
/// maximiser has `y_i = r b_i / (mu - r^2 lam_i)` with `mu >= r^2 max lam`
/// chosen so that `||y|| = 1`.
fn max_sq_over_ball(vv: f64, lam: &[f64], b: &[f64], r: f64) -> f64 {
    let a: Vec<f64> = lam.iter().map(|l| r * r * l).collect();
    let c: Vec<f64> = b.iter().map(|v| r * v).collect();
    let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let value = |y: &[f64]| vv + y.iter().zip(&a).zip(&c).map(|((y, a), c)| a * y * y + 2.0 * c * y).sum::<f64>();
    let norm_at = |mu: f64| -> f64 { c.iter().zip(&a).map(|(c, a)| (c / (mu - a)).powi(2)).sum() };
    let gap = |i: usize| top - a[i];
    let scale = top.abs().max(1e-300);
    let degenerate = |i: usize| gap(i) <= 1e-12 * scale;
    // hard case: the secular equation has no root above the top eigenvalue
    let partial: f64 = (0..a.len()).filter(|&i| !degenerate(i)).map(|i| (c[i] / gap(i)).powi(2)).sum();
    if (0..a.len()).filter(|&i| degenerate(i)).all(|i| c[i].abs() <= 1e-15 * scale.sqrt()) && partial <= 1.0 {
        let mut y: Vec<f64> = (0..a.len()).map(|i| if degenerate(i) { 0.0 } else { c[i] / gap(i) }).collect();
        if let Some(i) = (0..a.len()).find(|&i| degenerate(i)) {
            y[i] = (1.0 - partial).max(0.0).sqrt();
        }
        return value(&y);
    }
    let (mut lo, mut hi) = (top, top + c.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-300);
    while norm_at(hi) > 1.0 {
        hi = top + 2.0 * (hi - top);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y: Vec<f64> = c.iter().zip(&a).map(|(c, a)| c / (hi - a)).collect();
    value(&y)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBody {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBody {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        BoxBody { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }
}

impl ConvexBody for BoxBody {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    fn sandwich(&self) -> Sandwich {
        let center: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let halves: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect();
        let inner = halves.iter().cloned().fold(f64::INFINITY, f64::min);
        Sandwich { center, inner, outer: lp_norm(&halves, 2.0) }
    }

    fn chord(&self, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..x.len() {
            if u[i] > 0.0 {
                hi = hi.min((self.hi[i] - x[i]) / u[i]);
                lo = lo.max((self.lo[i] - x[i]) / u[i]);
            } else if u[i] < 0.0 {
                hi = hi.min((self.lo[i] - x[i]) / u[i]);
                lo = lo.max((self.hi[i] - x[i]) / u[i]);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(SqError::Geometry("zero chord direction".into()));
        }
        Ok((lo.min(0.0), hi.max(0.0)))
    }

    fn inscribed_scale(&self, x: &[f64], factor: &DMatrix<f64>) -> Option<f64> {
        let mut r = f64::INFINITY;
        for i in 0..x.len() {
            let row = factor.row(i).norm();
            if row > 0.0 {
                r = r.min((x[i] - self.lo[i]).min(self.hi[i] - x[i]) / row);
            }
        }
        Some(r.max(0.0))
    }
}

fn halfspace_chord(a: &[f64], b: f64, x: &[f64], u: &[f64], lo: &mut f64, hi: &mut f64) {
    let slack = b - dot(a, x);
    let rate = dot(a, u);
    if rate > 0.0 {
        *hi = hi.min(slack / rate);
    } else if rate < 0.0 {
        *lo = lo.max(slack / rate);
    }
}

fn halfspace_scale(a: &[f64], b: f64, x: &[f64], factor: &DMatrix<f64>) -> f64 {
    let reach = (factor.transpose() * DVector::from_column_slice(a)).norm();
    if reach > 0.0 {
        ((b - dot(a, x)) / reach).max(0.0)
    } else {
        f64::INFINITY
    }
}

/// Polytope `{x : <a_i, x> <= b_i}` with a caller-supplied certificate.
#[derive(Debug, Clone)]
pub struct PolytopeBody {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    certificate: Sandwich,
}

impl PolytopeBody {
    /// The inner ball of the certificate is checked against every facet;
    /// the outer radius is trusted.
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>, certificate: Sandwich) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(SqError::DimensionMismatch { expected: normals.len(), actual: offsets.len() });
        }
        for (a, &b) in normals.iter().zip(&offsets) {
            check_dim(certificate.center.len(), a.len())?;
            if dot(a, &certificate.center) + certificate.inner * lp_norm(a, 2.0) > b * (1.0 + 1e-12) + 1e-12 {
                return Err(SqError::Geometry("inner ball of the certificate crosses a facet".into()));
            }
        }
        Ok(PolytopeBody { normals, offsets, certificate })
    }

    pub fn facets(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.normals.iter().map(|a| a.as_slice()).zip(self.offsets.iter().copied())
    }
}

impl ConvexBody for PolytopeBody {
    fn dim(&self) -> usize {
        self.certificate.center.len()
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.facets().all(|(a, b)| dot(a, x) <= b)
    }

    fn sandwich(&self) -> Sandwich {
        self.certificate.clone()
    }

    fn chord(&self, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (a, b) in self.facets() {
            halfspace_chord(a, b, x, u, &mut lo, &mut hi);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return bisection_chord(self, x, u);
        }
        Ok((lo.min(0.0), hi.max(0.0)))
    }

    fn inscribed_scale(&self, x: &[f64], factor: &DMatrix<f64>) -> Option<f64> {
        Some(self.facets().map(|(a, b)| halfspace_scale(a, b, x, factor)).fold(f64::INFINITY, f64::min))
    }
}

/// A base body intersected with halfspace cuts, together with the affine
/// frame `(map, offset)` used to precondition sampling and the sandwich radii
/// of the body in that frame.
#[derive(Clone)]
pub struct Localizer {
    base: Arc<dyn ConvexBody>,
    cuts: Vec<(Vec<f64>, f64)>,
    pub map: DMatrix<f64>,
    pub offset: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

impl Localizer {
    pub fn new(base: Arc<dyn ConvexBody>) -> Self {
        let s = base.sandwich();
        let d = base.dim();
        Localizer { base, cuts: Vec::new(), map: DMatrix::identity(d, d), offset: s.center, inner: s.inner, outer: s.outer }
    }

    /// Keeps `{y : <normal, y> <= offset}`.
    pub fn cut(&mut self, normal: Vec<f64>, offset: f64) {
        self.cuts.push((normal, offset));
    }

    pub fn cuts(&self) -> &[(Vec<f64>, f64)] {
        &self.cuts
    }

    /// Outer-to-inner radius ratio in the current frame.
    pub fn radius_ratio(&self) -> f64 {
        self.outer / self.inner
    }
}

impl ConvexBody for Localizer {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.base.contains(x) && self.cuts.iter().all(|(a, b)| dot(a, x) <= *b)
    }

    /// Certificate in original coordinates, loosened through the frame map.
    fn sandwich(&self) -> Sandwich {
        let sv = self.map.clone().singular_values();
        Sandwich { center: self.offset.clone(), inner: self.inner * sv.min(), outer: self.outer * sv.max() }
    }

    fn chord(&self, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = self.base.chord(x, u)?;
        for (a, b) in &self.cuts {
            halfspace_chord(a, *b, x, u, &mut lo, &mut hi);
        }
        Ok((lo.min(0.0), hi.max(0.0)))
    }

    fn inscribed_scale(&self, x: &[f64], factor: &DMatrix<f64>) -> Option<f64> {
        let base = self.base.inscribed_scale(x, factor)?;
        Some(self.cuts.iter().map(|(a, b)| halfspace_scale(a, *b, x, factor)).fold(base, f64::min))
    }
}

/// Target density of the walk.
pub enum Density<'a> {
    Uniform,
    /// Proportional to `exp(-alpha value(x))`; the one-dimensional law on
    /// each chord is drawn from the log-linear interpolation of the density
    /// on `grid + 1` equally spaced nodes.
    Gibbs { alpha: f64, value: &'a (dyn Fn(&[f64]) -> f64 + Sync), grid: usize },
}

/// Walk schedule: each chain discards `burn_in` steps, then keeps every
/// `thin`-th point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
}

impl SamplerConfig {
    /// `10 d^2` burn-in steps, thinning by `d`, eight chains.
    pub fn for_dim(d: usize) -> Self {
        SamplerConfig { burn_in: 10 * d * d, thin: d.max(1), chains: 8 }
    }
}

fn draw_on_chord(density: &Density<'_>, x: &[f64], u: &[f64], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    match density {
        Density::Uniform => rng.gen_range(lo..=hi),
        Density::Gibbs { alpha, value, grid } => {
            if *alpha == 0.0 {
                return rng.gen_range(lo..=hi);
            }
            let g = (*grid).max(1);
            let h = (hi - lo) / g as f64;
            let logs: Vec<f64> = (0..=g)
                .map(|k| {
                    let t = lo + k as f64 * h;
                    let p: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + t * b).collect();
                    -alpha * value(&p)
                })
                .collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let masses: Vec<f64> = logs
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0] - top, w[1] - top);
                    if (a - b).abs() < 1e-12 {
                        h * a.exp()
                    } else {
                        h * (a.exp() - b.exp()) / (a - b)
                    }
                })
                .collect();
            let total: f64 = masses.iter().sum();
            let mut pick = rng.gen::<f64>() * total;
            let mut cell = g - 1;
            for (k, m) in masses.iter().enumerate() {
                if pick < *m {
                    cell = k;
                    break;
                }
                pick -= m;
            }
            let slope = (logs[cell + 1] - logs[cell]) / h;
            let v: f64 = rng.gen();
            let offset = if (slope * h).abs() < 1e-10 {
                v * h
            } else if slope < 0.0 {
                (v * (slope * h).exp_m1()).ln_1p() / slope
            } else {
                h - (v * (-slope * h).exp_m1()).ln_1p() / -slope
            };
            lo + cell as f64 * h + offset.clamp(0.0, h)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    body: &dyn ConvexBody,
    density: &Density<'_>,
    start: &[f64],
    precond: &DMatrix<f64>,
    keep: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(&[f64]),
) -> Result<Vec<Vec<f64>>> {
    let d = start.len();
    let mut x = start.to_vec();
    let mut out = Vec::with_capacity(keep);
    let total = burn_in + keep * thin.max(1);
    for step in 1..=total {
        let xi = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dir = precond * xi;
        let u: Vec<f64> = dir.iter().copied().collect();
        if lp_norm(&u, 2.0) > 0.0 {
            let (lo, hi) = body.chord(&x, &u)?;
            if hi > lo {
                let t = draw_on_chord(density, &x, &u, lo, hi, rng);
                let next: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t * b).collect();
                if body.contains(&next) {
                    x = next;
                }
            }
        }
        visit(&x);
        if step > burn_in && (step - burn_in) % thin.max(1) == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

fn uniform_samples(
    body: &dyn ConvexBody,
    start: &[f64],
    precond: &DMatrix<f64>,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !body.contains(start) {
        return Err(SqError::Geometry("walk start lies outside the body".into()));
    }
    let chains = cfg.chains.max(1);
    let per = n.div_ceil(chains);
    let parts: Vec<Result<Vec<Vec<f64>>>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(c as u64 + 1)));
            run_chain(body, &Density::Uniform, start, precond, per, cfg.burn_in, cfg.thin, &mut rng, |_| {})
        })
        .collect();
    let mut all = Vec::with_capacity(per * chains);
    for p in parts {
        all.extend(p?);
    }
    all.truncate(n);
    Ok(all)
}

/// `n` hit-and-run points from the body, started at the certificate centre.
/// Uniform chains run in parallel; Gibbs sampling uses one chain so the
/// value function is called in a deterministic order.
pub fn hit_and_run_sample(
    body: &dyn ConvexBody,
    density: &Density<'_>,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let s = body.sandwich();
    let d = body.dim();
    let id = DMatrix::identity(d, d);
    match density {
        Density::Uniform => uniform_samples(body, &s.center, &id, n, cfg, seed),
        Density::Gibbs { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_chain(body, density, &s.center, &id, n, cfg.burn_in, cfg.thin, &mut rng, |_| {})
        }
    }
}

/// Estimated centroid and inertial ellipsoid.
#[derive(Debug, Clone)]
pub struct CentroidInertia {
    pub centroid: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// `{y : (y - centroid)^T A^{-1} (y - centroid) <= 1}` for the sample
    /// covariance `A`.
    pub ellipsoid: EllipsoidSpec,
    pub samples: usize,
}

/// Sample count `ceil(40 d (ln d + 1) / chi^2)` with `chi` the centroid slack.
pub fn default_inertia_samples(d: usize) -> usize {
    (40.0 * d as f64 * ((d as f64).ln() + 1.0) / (CENTROID_SLACK * CENTROID_SLACK)).ceil() as usize
}

fn moments(points: &[Vec<f64>], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / n);
    }
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_iterator(d, p.iter().zip(&mean).map(|(a, b)| a - b));
        cov += &c * c.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    (mean, cov)
}

fn inertia_from_samples(points: &[Vec<f64>], d: usize) -> Result<CentroidInertia> {
    if points.len() <= d {
        return Err(SqError::Conditioning(format!("{} samples cannot span dimension {d}", points.len())));
    }
    let (centroid, covariance) = moments(points, d);
    let ellipsoid = EllipsoidSpec::from_shape(centroid.clone(), &covariance)?;
    Ok(CentroidInertia { centroid, covariance, ellipsoid, samples: points.len() })
}

/// Sample mean and covariance of `n` uniform hit-and-run points.
pub fn estimate_centroid_inertia(
    body: &dyn ConvexBody,
    n: Option<usize>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<CentroidInertia> {
    let d = body.dim();
    let n = n.unwrap_or_else(|| default_inertia_samples(d));
    let pts = hit_and_run_sample(body, &Density::Uniform, n, cfg, seed)?;
    inertia_from_samples(&pts, d)
}

/// Settings of the centre-of-gravity method.
#[derive(Debug, Clone, PartialEq)]
pub struct CogConfig {
    /// Volume reduction per cut assumed by the analysis.
    pub gamma: f64,
    /// Number of rounds; defaults to [`default_cog_rounds`].
    pub rounds: Option<usize>,
    /// Uniform samples per round; defaults to [`default_cog_samples`].
    pub samples: Option<usize>,
    pub sampler: Option<SamplerConfig>,
    pub seed: u64,
}

impl Default for CogConfig {
    fn default() -> Self {
        CogConfig { gamma: 2.0 / 3.0, rounds: None, samples: None, sampler: None, seed: 0 }
    }
}

/// Rounds after which `2 B gamma^{T/d} <= eps / 4`.
pub fn default_cog_rounds(d: usize, b: f64, eps: f64, gamma: f64) -> usize {
    (d as f64 * (8.0 * b / eps).ln() / (1.0 / gamma).ln()).ceil().max(1.0) as usize
}

/// Samples per round so that the centroid estimate is within the centroid
/// slack in the inertial norm in every round with probability `1 - delta`
/// under a Gaussian approximation of the sample mean.
pub fn default_cog_samples(d: usize, rounds: usize, delta: f64) -> usize {
    let dev = (d as f64).sqrt() + (2.0 * (rounds as f64 / delta).ln()).sqrt();
    (dev * dev / (CENTROID_SLACK * CENTROID_SLACK)).ceil() as usize
}

/// Inner and outer radii, in the estimated inertial norm, of the localizer
/// about an approximate centroid.
pub fn inertial_radii(d: usize) -> (f64, f64) {
    let df = d as f64;
    let chi = CENTROID_SLACK;
    (((df + 2.0) / df).sqrt() - chi, (1.0 + chi) * ((df * (df + 2.0)).sqrt() + chi))
}

/// One round of [`cog_optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct CogRound {
    pub probe: Vec<f64>,
    pub value_estimate: f64,
    pub gradient: Vec<f64>,
    pub gradient_queries: usize,
    pub value_queries: usize,
    /// `STAT` tolerance of the gradient queries.
    pub tolerance: f64,
    pub inner: f64,
    pub outer: f64,
    /// Whether the frame radius ratio stayed within `max(initial, 4d)`.
    pub ratio_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CogReport {
    pub x: Vec<f64>,
    pub value_estimate: f64,
    pub gap_bound: f64,
    pub rounds: Vec<CogRound>,
    pub queries: usize,
    /// The estimated gradient vanished, so the last probe is near-optimal.
    pub converged: bool,
    /// Sampling or the inertial ellipsoid broke down; the best probe so far
    /// is returned.
    pub degenerate: bool,
}

fn finish_report(rounds: Vec<CogRound>, gap_bound: f64, queries: usize, converged: bool, degenerate: bool, fallback: Vec<f64>) -> CogReport {
    let best = rounds
        .iter()
        .min_by(|a, b| a.value_estimate.partial_cmp(&b.value_estimate).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value_estimate) = match best {
        Some(r) => (r.probe.clone(), r.value_estimate),
        None => (fallback, f64::NAN),
    };
    CogReport { x, value_estimate, gap_bound, rounds, queries, converged, degenerate }
}

/// Approximate centre-of-gravity method for `min_K E[f(x, w)]` where every
/// `f(., w)` is convex with `|f| <= b` on the body. Each round spends `2d`
/// gradient queries and one value query; the probe with the smallest value
/// estimate is returned. The certified gap is
/// `2 b gamma^{T/d} + eps/4 + eps/2`.
#[allow(clippy::too_many_arguments)]
pub fn cog_optimize<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    objective: &dyn Objective<W>,
    value_bound: f64,
    body: Arc<dyn ConvexBody>,
    eps: f64,
    delta: f64,
    config: &CogConfig,
) -> Result<CogReport> {
    if !(eps > 0.0 && value_bound > 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(SqError::InvalidParameter("need eps, value bound > 0 and delta in (0, 1)".into()));
    }
    if !(config.gamma > 0.0 && config.gamma < 1.0) {
        return Err(SqError::InvalidParameter(format!("volume factor must lie in (0, 1), got {}", config.gamma)));
    }
    let d = body.dim();
    let b = value_bound;
    let eta = eps / 4.0;
    let rounds = config.rounds.unwrap_or_else(|| default_cog_rounds(d, b, eps, config.gamma));
    let n = config.samples.unwrap_or_else(|| default_cog_samples(d, rounds, delta));
    let sampler = config.sampler.unwrap_or_else(|| SamplerConfig::for_dim(d));
    let (r0, r1) = inertial_radii(d);
    let mut loc = Localizer::new(body.clone());
    let ratio_cap = loc.radius_ratio().max(4.0 * d as f64);
    let gap_bound = 2.0 * b * config.gamma.powf(rounds as f64 / d as f64) + eta + eps / 2.0;
    let mut history: Vec<CogRound> = Vec::with_capacity(rounds);
    let mut queries = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..rounds {
        let pts = match uniform_samples(&loc, &loc.offset.clone(), &loc.map.clone(), n, &sampler, rng.gen()) {
            Ok(p) => p,
            Err(SqError::Geometry(_)) => return Ok(finish_report(history, gap_bound, queries, false, true, loc.offset)),
            Err(e) => return Err(e),
        };
        let inertia = match inertia_from_samples(&pts, d) {
            Ok(i) => i,
            Err(SqError::Conditioning(_)) => {
                return Ok(finish_report(history, gap_bound, queries, false, true, loc.offset))
            }
            Err(e) => return Err(e),
        };
        let z = inertia.centroid.clone();
        let factor = inertia.ellipsoid.factor().clone();
        let inner = loc.inscribed_scale(&z, &factor).unwrap_or(r0).min(r0);
        if !(inner > 1e-12) {
            return Ok(finish_report(history, gap_bound, queries, false, true, loc.offset));
        }
        let reach = pts.iter().map(|p| inertia.ellipsoid.norm(&crate::geometry::sub(p, &z))).fold(0.0, f64::max);
        let outer = r1.max(reach);

        let zv = z.clone();
        let value = |w: &W| objective.value(&zv, w) / b;
        let value_estimate = h.query_stat(&value, eps / (4.0 * b))? * b;

        let dual = EllipsoidSpec::from_factor(vec![0.0; d], factor.transpose().try_inverse().ok_or_else(|| {
            SqError::Conditioning("singular inertial factor".into())
        })?)?;
        let scale = 2.0 * b / inner;
        let grad_map = |w: &W, out: &mut [f64]| {
            objective.gradient(&zv, w, out);
            out.iter_mut().for_each(|v| *v /= scale);
        };
        let err = inner * eta / (2.0 * outer * b);
        let est = estimate_ellipsoidal(h, &dual, &grad_map, err)?;
        let g: Vec<f64> = est.mean.iter().map(|v| v * scale).collect();
        queries += est.queries + 1;

        let whitened = factor.transpose() * DVector::from_column_slice(&g);
        let gnorm = whitened.norm();
        let mut round = CogRound {
            probe: z.clone(),
            value_estimate,
            gradient: g.clone(),
            gradient_queries: est.queries,
            value_queries: 1,
            tolerance: err / crate::meanest::KashinFrame::shared(d)?.level(),
            inner: inner / 2.0,
            outer: outer + inner / 2.0,
            ratio_ok: true,
        };
        if gnorm == 0.0 {
            history.push(round);
            return Ok(finish_report(history, gap_bound, queries, true, false, loc.offset));
        }
        let offset = dot(&g, &z);
        loc.cut(g, offset);
        let nrm = whitened / gnorm;
        let shift = &factor * nrm;
        loc.offset = z.iter().zip(shift.iter()).map(|(a, s)| a - 0.5 * inner * s).collect();
        loc.map = factor;
        loc.inner = inner / 2.0;
        loc.outer = outer + inner / 2.0;
        round.ratio_ok = loc.radius_ratio() <= ratio_cap * (1.0 + 1e-9);
        history.push(round);
    }
    Ok(finish_report(history, gap_bound, queries, false, false, loc.offset))
}

/// Value oracle built from `STAT` queries and memoised on a `1e-9` grid, so
/// repeated requests at the same point get the same answer.
pub struct MemoValue<'a, W> {
    h: &'a OracleHandle<W>,
    objective: &'a dyn Objective<W>,
    bound: f64,
    tolerance: f64,
    cache: Mutex<HashMap<Vec<i64>, f64>>,
    failure: Mutex<Option<SqError>>,
}

impl<'a, W: Send + Sync + 'static> MemoValue<'a, W> {
    /// `tolerance` is the `STAT` tolerance on `f / bound`.
    pub fn new(h: &'a OracleHandle<W>, objective: &'a dyn Objective<W>, bound: f64, tolerance: f64) -> Self {
        MemoValue { h, objective, bound, tolerance, cache: Mutex::new(HashMap::new()), failure: Mutex::new(None) }
    }

    fn key(x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v * 1e9).round() as i64).collect()
    }

    /// Approximate `F(x)`; NaN after an oracle failure, which is kept for
    /// [`Self::take_failure`].
    pub fn value(&self, x: &[f64]) -> f64 {
        let k = Self::key(x);
        if let Some(v) = self.cache.lock().unwrap().get(&k) {
            return *v;
        }
        let f = |w: &W| self.objective.value(x, w) / self.bound;
        match self.h.query_stat(&f, self.tolerance) {
            Ok(v) => {
                let v = v * self.bound;
                self.cache.lock().unwrap().insert(k, v);
                v
            }
            Err(e) => {
                self.failure.lock().unwrap().get_or_insert(e);
                f64::NAN
            }
        }
    }

    pub fn take_failure(&self) -> Option<SqError> {
        self.failure.lock().unwrap().take()
    }

    pub fn distinct_points(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// Settings of the annealing optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnealConfig {
    /// Walk length; defaults to `20 d^2`.
    pub steps: Option<usize>,
    /// Cells per chord in the one-dimensional draw.
    pub grid: usize,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig { steps: None, grid: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealReport {
    pub x: Vec<f64>,
    pub value_estimate: f64,
    pub alpha: f64,
    /// `STAT` tolerance on `f / b`.
    pub tolerance: f64,
    pub steps: usize,
    pub queries: usize,
}

/// Inverse temperature `4 (d + ln(1/delta)) / eps`.
pub fn anneal_temperature(d: usize, eps: f64, delta: f64) -> f64 {
    4.0 * (d as f64 + (1.0 / delta).ln()) / eps
}

/// Hit-and-run on `exp(-alpha F~)` from the certificate centre, where `F~`
/// is a memoised value oracle answering `STAT(eps / (d b))` on `f / b`;
/// returns the visited point with the smallest value.
pub fn anneal_optimize<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    objective: &dyn Objective<W>,
    value_bound: f64,
    body: &dyn ConvexBody,
    eps: f64,
    delta: f64,
    config: &AnnealConfig,
) -> Result<AnnealReport> {
    if !(eps > 0.0 && value_bound > 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(SqError::InvalidParameter("need eps, value bound > 0 and delta in (0, 1)".into()));
    }
    let d = body.dim();
    let alpha = anneal_temperature(d, eps, delta);
    let tolerance = eps / (d as f64 * value_bound);
    let memo = MemoValue::new(h, objective, value_bound, tolerance);
    let value = |x: &[f64]| memo.value(x);
    let density = Density::Gibbs { alpha, value: &value, grid: config.grid };
    let steps = config.steps.unwrap_or(20 * d * d);
    let start = body.sandwich().center;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best = (memo.value(&start), start.clone());
    let id = DMatrix::identity(d, d);
    run_chain(body, &density, &start, &id, 0, steps, 1, &mut rng, |x| {
        let v = memo.value(x);
        if v < best.0 {
            best = (v, x.to_vec());
        }
    })?;
    if let Some(e) = memo.take_failure() {
        return Err(e);
    }
    Ok(AnnealReport { x: best.1, value_estimate: best.0, alpha, tolerance, steps, queries: memo.distinct_points() })
}
