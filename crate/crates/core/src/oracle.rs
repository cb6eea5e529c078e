//! Statistical query oracles.
//!
//! An [`OracleHandle`] answers `STAT(tau)` and `VSTAT(n)` queries about a
//! hidden distribution. Queries are issued in batches of `k` functions that
//! share one evaluation map `W -> R^k`; each coordinate counts as one query.
//! The backend decides how answers are produced: exact expectations with a
//! pluggable noise policy, empirical means of simulated samples, or means of
//! locally privatised samples.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SqError};

/// Vector-valued query map: writes `k` function values for one sample.
pub type QueryMap<'a, W> = &'a (dyn Fn(&W, &mut [f64]) + Sync);

/// Scalar query function.
pub type QueryFn<'a, W> = &'a (dyn Fn(&W) -> f64 + Sync);

const RANGE_SLACK: f64 = 1e-9;
const PAR_CHUNK: usize = 64;

/// A distribution the oracle can draw from and, optionally, integrate
/// against exactly.
pub trait DistributionSource<W>: Send + Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> W;

    /// `E[f(w)]` for a `k`-vector map, when the source supports it.
    fn expect(&self, _k: usize, _f: QueryMap<'_, W>) -> Option<Vec<f64>> {
        None
    }
}

/// Finitely supported distribution: weighted atoms.
#[derive(Debug, Clone)]
pub struct FiniteDistribution<W> {
    atoms: Vec<W>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<W> FiniteDistribution<W> {
    pub fn new(atoms: Vec<W>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(SqError::InvalidParameter(format!(
                "{} atoms with {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(SqError::InvalidParameter("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(SqError::InvalidParameter("weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(FiniteDistribution { atoms, weights, cumulative })
    }

    pub fn uniform(atoms: Vec<W>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0; n])
    }

    pub fn point_mass(atom: W) -> Self {
        Self::new(vec![atom], vec![1.0]).expect("single atom is valid")
    }

    pub fn atoms(&self) -> &[W] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Exact expectation of a scalar function.
    pub fn mean_of(&self, f: impl Fn(&W) -> f64) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| w * f(a)).sum()
    }

    /// Exact expectation of a vector map.
    pub fn mean_vector(&self, k: usize, f: impl Fn(&W, &mut [f64])) -> Vec<f64> {
        let mut out = vec![0.0; k];
        let mut buf = vec![0.0; k];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            f(a, &mut buf);
            out.iter_mut().zip(&buf).for_each(|(o, b)| *o += w * b);
        }
        out
    }

    /// Index of an atom drawn according to the weights.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c <= u).min(self.atoms.len() - 1)
    }
}

impl<W: Clone + Send + Sync> DistributionSource<W> for FiniteDistribution<W> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> W {
        self.atoms[self.draw_index(rng)].clone()
    }

    fn expect(&self, k: usize, f: QueryMap<'_, W>) -> Option<Vec<f64>> {
        Some(weighted_sum(&self.atoms, Some(&self.weights), k, f))
    }
}

/// `sum_i weight_i f(item_i)` (uniform weights `1/n` when `weights` is
/// `None`). Chunks are evaluated in parallel and summed in a fixed order, so
/// the result does not depend on thread scheduling.
fn weighted_sum<W: Sync>(items: &[W], weights: Option<&[f64]>, k: usize, f: QueryMap<'_, W>) -> Vec<f64> {
    let n = items.len();
    let partials: Vec<Vec<f64>> = items
        .par_chunks(PAR_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = vec![0.0; k];
            let mut buf = vec![0.0; k];
            for (i, item) in chunk.iter().enumerate() {
                f(item, &mut buf);
                let w = weights.map_or(1.0 / n as f64, |ws| ws[c * PAR_CHUNK + i]);
                acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += w * b);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; k];
    for p in partials {
        out.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
    }
    out
}

/// Which way an adversarial answer is pushed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignHint {
    Plus,
    Minus,
    /// `+` on even coordinates of a batch, `-` on odd ones.
    Alternating,
    /// Independent fair signs from the oracle's generator.
    Random,
}

/// How the exact backend perturbs a true expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePolicy {
    Zero,
    /// Uniform on the whole tolerance band.
    Uniform,
    /// Exactly on the edge of the tolerance band.
    Adversarial(SignHint),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// True expectation plus noise chosen by the policy.
    Exact(NoisePolicy),
    /// Empirical mean of enough fresh samples that each answer is within
    /// tolerance except with probability `delta_fail`.
    Samples { delta_fail: f64, max_samples: u64 },
    /// Empirical mean of samples released through a Laplace randomiser with
    /// privacy parameter `privacy`.
    Ldp { privacy: f64, delta_fail: f64, max_samples: u64 },
}

impl Backend {
    pub fn exact(policy: NoisePolicy) -> Self {
        Backend::Exact(policy)
    }

    pub fn samples() -> Self {
        Backend::Samples { delta_fail: 1e-6, max_samples: 50_000_000 }
    }

    pub fn ldp(privacy: f64) -> Self {
        Backend::Ldp { privacy, delta_fail: 1e-6, max_samples: 50_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Stat,
    Vstat,
    Ldp,
}

/// One batch of queries as recorded by the ledger. `parameter` is the
/// tolerance for `Stat`/`Ldp` batches and the sample-size parameter `n` for
/// `Vstat` batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub kind: QueryKind,
    pub count: usize,
    pub parameter: f64,
}

/// Running account of the queries answered by one handle.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryLedger {
    pub queries: usize,
    pub stat_queries: usize,
    pub vstat_queries: usize,
    /// Smallest `STAT` tolerance requested.
    pub min_tolerance: f64,
    /// Largest `VSTAT` parameter requested.
    pub max_vstat_n: f64,
    /// Samples consumed by simulating backends.
    pub samples_drawn: u64,
    pub entries: Vec<LedgerEntry>,
}

impl Default for QueryLedger {
    fn default() -> Self {
        QueryLedger {
            queries: 0,
            stat_queries: 0,
            vstat_queries: 0,
            min_tolerance: f64::INFINITY,
            max_vstat_n: 0.0,
            samples_drawn: 0,
            entries: Vec::new(),
        }
    }
}

impl QueryLedger {
    /// `max(1/tau_min^2, n_max)`.
    pub fn estimation_complexity(&self) -> f64 {
        let stat = if self.min_tolerance.is_finite() { self.min_tolerance.powi(-2) } else { 0.0 };
        stat.max(self.max_vstat_n)
    }

    fn record(&mut self, kind: QueryKind, count: usize, parameter: f64) {
        self.queries += count;
        match kind {
            QueryKind::Stat | QueryKind::Ldp => {
                self.stat_queries += count;
                self.min_tolerance = self.min_tolerance.min(parameter);
            }
            QueryKind::Vstat => {
                self.vstat_queries += count;
                self.max_vstat_n = self.max_vstat_n.max(parameter);
            }
        }
        self.entries.push(LedgerEntry { kind, count, parameter });
    }
}

/// `||phi(w)|| <= 1` style range guard: remembers the first offending value.
struct RangeGuard {
    lo: f64,
    hi: f64,
    violation: Mutex<Option<(usize, f64)>>,
}

impl RangeGuard {
    fn new(lo: f64, hi: f64) -> Self {
        RangeGuard { lo, hi, violation: Mutex::new(None) }
    }

    fn check(&self, out: &[f64]) {
        for (i, &v) in out.iter().enumerate() {
            if !(v >= self.lo - RANGE_SLACK && v <= self.hi + RANGE_SLACK) {
                let mut slot = self.violation.lock().unwrap();
                if slot.is_none() {
                    *slot = Some((i, v));
                }
                return;
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.violation.into_inner().unwrap() {
            None => Ok(()),
            Some((i, v)) => Err(SqError::Contract(format!(
                "query {i} evaluated to {v}, outside [{}, {}]",
                self.lo, self.hi
            ))),
        }
    }
}

/// Width of the `VSTAT(n)` answer band around a true mean `p`.
pub fn vstat_band(p: f64, n: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (1.0 / n).max((p * (1.0 - p) / n).sqrt())
}

/// Samples the simulating backend draws to answer one `STAT(tau)` query on a
/// `[-1, 1]` function: Hoeffding with failure probability `2 delta`.
pub fn stat_sample_size(tau: f64, delta_fail: f64) -> u64 {
    (2.0 * (1.0 / delta_fail).ln() / (tau * tau)).ceil() as u64
}

/// Samples the simulating backend draws to answer one `VSTAT(n)` query:
/// Bernstein with the band `max(1/n, sqrt(p(1-p)/n))`.
pub fn vstat_sample_size(n: f64, delta_fail: f64) -> u64 {
    (8.0 / 3.0 * n * (2.0 / delta_fail).ln()).ceil() as u64
}

/// Samples needed for a locally private `[0, 1]` query at tolerance `tau`.
pub fn ldp_sample_size(privacy: f64, tau: f64, delta: f64) -> u64 {
    (8.0 * (2.0 / delta).ln() / (privacy * privacy * tau * tau)).ceil() as u64
}

pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Laplace mechanism on `[0, 1]` inputs: releases `x + Lap(1/privacy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceRandomizer {
    pub privacy: f64,
}

impl LaplaceRandomizer {
    pub fn release<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        x + sample_laplace(rng, 1.0 / self.privacy)
    }

    /// Output density at `z` for input `x`.
    pub fn density(&self, x: f64, z: f64) -> f64 {
        0.5 * self.privacy * (-self.privacy * (z - x).abs()).exp()
    }
}

/// Handle to an oracle for a distribution over `W`.
pub struct OracleHandle<W> {
    source: Arc<dyn DistributionSource<W>>,
    backend: Backend,
    ledger: Mutex<QueryLedger>,
    rng: Mutex<ChaCha8Rng>,
}

impl<W: Send + Sync + 'static> OracleHandle<W> {
    pub fn new(source: Arc<dyn DistributionSource<W>>, backend: Backend, seed: u64) -> Self {
        OracleHandle {
            source,
            backend,
            ledger: Mutex::new(QueryLedger::default()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn ledger(&self) -> QueryLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn reset_ledger(&self) {
        *self.ledger.lock().unwrap() = QueryLedger::default();
    }

    fn fork_rng(&self) -> ChaCha8Rng {
        let mut r = self.rng.lock().unwrap();
        ChaCha8Rng::seed_from_u64(r.gen())
    }

    fn draw_samples(&self, m: u64, rng: &mut ChaCha8Rng) -> Vec<W> {
        (0..m).map(|_| self.source.draw(rng)).collect()
    }

    fn exact_means(&self, k: usize, f: QueryMap<'_, W>) -> Result<Vec<f64>> {
        self.source
            .expect(k, f)
            .ok_or_else(|| SqError::Backend("source has no exact expectation".into()))
    }

    fn sign(&self, hint: SignHint, coord: usize, rng: &mut ChaCha8Rng) -> f64 {
        match hint {
            SignHint::Plus => 1.0,
            SignHint::Minus => -1.0,
            SignHint::Alternating => {
                if coord % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            SignHint::Random => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Answers `k` `STAT(tau)` queries given by the coordinates of `f`, each
    /// of which must take values in `[-1, 1]`.
    pub fn stat_batch(&self, k: usize, f: QueryMap<'_, W>, tau: f64) -> Result<Vec<f64>> {
        if !(tau > 0.0) {
            return Err(SqError::InvalidParameter(format!("tolerance must be positive, got {tau}")));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let guard = RangeGuard::new(-1.0, 1.0);
        let checked = |w: &W, out: &mut [f64]| {
            f(w, out);
            guard.check(out);
        };
        let mut rng = self.fork_rng();
        let (answers, drawn) = match self.backend {
            Backend::Exact(policy) => {
                let means = self.exact_means(k, &checked)?;
                let mut out = Vec::with_capacity(k);
                for (i, m) in means.into_iter().enumerate() {
                    let noise = match policy {
                        NoisePolicy::Zero => 0.0,
                        NoisePolicy::Uniform => rng.gen_range(-tau..=tau),
                        NoisePolicy::Adversarial(h) => self.sign(h, i, &mut rng) * tau,
                    };
                    out.push((m + noise).clamp(-1.0, 1.0));
                }
                (out, 0)
            }
            Backend::Samples { delta_fail, max_samples } => {
                let m = stat_sample_size(tau, delta_fail);
                if m > max_samples {
                    return Err(SqError::Backend(format!("{m} samples needed, budget {max_samples}")));
                }
                let samples = self.draw_samples(m, &mut rng);
                let means = weighted_sum(&samples, None, k, &checked);
                (means.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(), m)
            }
            Backend::Ldp { privacy, delta_fail, max_samples } => {
                // shift to [0, 1]; tolerance halves
                let m = ldp_sample_size(privacy, tau / 2.0, delta_fail);
                if m.saturating_mul(k as u64) > max_samples {
                    return Err(SqError::Backend(format!("{} samples needed, budget {max_samples}", m * k as u64)));
                }
                let rand = LaplaceRandomizer { privacy };
                let mut out = vec![0.0; k];
                let mut buf = vec![0.0; k];
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for _ in 0..m {
                        let w = self.source.draw(&mut rng);
                        checked(&w, &mut buf);
                        acc += rand.release((buf[i] + 1.0) / 2.0, &mut rng);
                    }
                    *o = (2.0 * acc / m as f64 - 1.0).clamp(-1.0, 1.0);
                }
                (out, m * k as u64)
            }
        };
        guard.finish()?;
        let mut l = self.ledger.lock().unwrap();
        let kind = if matches!(self.backend, Backend::Ldp { .. }) { QueryKind::Ldp } else { QueryKind::Stat };
        l.record(kind, k, tau);
        l.samples_drawn += drawn;
        Ok(answers)
    }

    /// Answers `k` `VSTAT(n)` queries given by the coordinates of `f`, each
    /// of which must take values in `[0, 1]`.
    pub fn vstat_batch(&self, k: usize, f: QueryMap<'_, W>, n: f64) -> Result<Vec<f64>> {
        if !(n >= 1.0) || !n.is_finite() {
            return Err(SqError::InvalidParameter(format!("VSTAT parameter must be >= 1, got {n}")));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let guard = RangeGuard::new(0.0, 1.0);
        let checked = |w: &W, out: &mut [f64]| {
            f(w, out);
            guard.check(out);
        };
        let mut rng = self.fork_rng();
        let (answers, drawn) = match self.backend {
            Backend::Exact(policy) => {
                let means = self.exact_means(k, &checked)?;
                let mut out = Vec::with_capacity(k);
                for (i, p) in means.into_iter().enumerate() {
                    let b = vstat_band(p, n);
                    let noise = match policy {
                        NoisePolicy::Zero => 0.0,
                        NoisePolicy::Uniform => rng.gen_range(-b..=b),
                        NoisePolicy::Adversarial(h) => self.sign(h, i, &mut rng) * b,
                    };
                    out.push((p + noise).clamp(0.0, 1.0));
                }
                (out, 0)
            }
            Backend::Samples { delta_fail, max_samples } => {
                let m = vstat_sample_size(n, delta_fail);
                if m > max_samples {
                    return Err(SqError::Backend(format!("{m} samples needed, budget {max_samples}")));
                }
                let samples = self.draw_samples(m, &mut rng);
                (weighted_sum(&samples, None, k, &checked), m)
            }
            Backend::Ldp { .. } => {
                // STAT(1/n) answers are valid VSTAT(n) answers; the [0, 1]
                // range maps onto [-1, 1] with doubled tolerance.
                drop(rng);
                let shifted = |w: &W, out: &mut [f64]| {
                    checked(w, out);
                    out.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
                };
                let ans = self.stat_batch(k, &shifted, 2.0 / n)?;
                guard.finish()?;
                return Ok(ans.into_iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect());
            }
        };
        guard.finish()?;
        let mut l = self.ledger.lock().unwrap();
        l.record(QueryKind::Vstat, k, n);
        l.samples_drawn += drawn;
        Ok(answers)
    }

    pub fn query_stat(&self, f: QueryFn<'_, W>, tau: f64) -> Result<f64> {
        Ok(self.stat_batch(1, &|w: &W, out: &mut [f64]| out[0] = f(w), tau)?[0])
    }

    pub fn query_vstat(&self, f: QueryFn<'_, W>, n: f64) -> Result<f64> {
        Ok(self.vstat_batch(1, &|w: &W, out: &mut [f64]| out[0] = f(w), n)?[0])
    }

    /// Estimates `E[phi * 1_A]` to within `P(A) / sqrt(n)` for any event with
    /// `P(A) >= alpha`, via `VSTAT(n / alpha)` on the product.
    pub fn conditional_vstat(&self, phi: QueryFn<'_, W>, event: QueryFn<'_, W>, alpha: f64, n: f64) -> Result<f64> {
        Ok(self.conditional_vstat_batch(1, &|w: &W, out: &mut [f64]| out[0] = phi(w), event, alpha, n)?[0])
    }

    /// Batch form of [`Self::conditional_vstat`].
    pub fn conditional_vstat_batch(
        &self,
        k: usize,
        phi: QueryMap<'_, W>,
        event: QueryFn<'_, W>,
        alpha: f64,
        n: f64,
    ) -> Result<Vec<f64>> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SqError::InvalidParameter(format!("event mass bound must lie in (0, 1], got {alpha}")));
        }
        let product = |w: &W, out: &mut [f64]| {
            let a = event(w);
            phi(w, out);
            out.iter_mut().for_each(|v| *v *= a);
        };
        self.vstat_batch(k, &product, (n / alpha).ceil())
    }

    /// Answers a `[0, 1]`-valued query from locally private reports: each of
    /// `ceil(8 ln(2/delta) / (privacy^2 tau^2))` fresh samples is released
    /// through the Laplace randomiser and the reports are averaged.
    pub fn ldp_query(&self, f: QueryFn<'_, W>, privacy: f64, tau: f64, delta: f64) -> Result<f64> {
        if !(privacy > 0.0 && tau > 0.0 && delta > 0.0 && delta < 1.0) {
            return Err(SqError::InvalidParameter("need privacy, tau > 0 and delta in (0, 1)".into()));
        }
        let m = ldp_sample_size(privacy, tau, delta);
        let mut rng = self.fork_rng();
        let rand = LaplaceRandomizer { privacy };
        let mut acc = 0.0;
        for _ in 0..m {
            let w = self.source.draw(&mut rng);
            let v = f(&w);
            if !(v >= -RANGE_SLACK && v <= 1.0 + RANGE_SLACK) {
                return Err(SqError::Contract(format!("query evaluated to {v}, outside [0, 1]")));
            }
            acc += rand.release(v, &mut rng);
        }
        let mut l = self.ledger.lock().unwrap();
        l.record(QueryKind::Ldp, 1, tau);
        l.samples_drawn += m;
        Ok(acc / m as f64)
    }
}
