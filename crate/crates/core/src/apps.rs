//! Learning with statistical queries: margin perceptron and `p`-norm
//! halfspace learners driven by estimated mean counterexamples, and
//! generalized linear models solved with the first-order methods.

use std::sync::Arc;

use crate::error::{Result, SqError};
use crate::firstorder::{
    accelerated_descent, mirror_descent, strongly_convex_solve, Constants, Objective, SolveReport,
    StochasticProblem,
};
use crate::geometry::{conjugate, dot, lp_norm, ProxSetup};
use crate::meanest::{estimate_lq_high, KashinFrame, SUPPORT_SLACK};
use crate::oracle::{OracleHandle, QueryLedger};

/// A labelled example `(x, y)` with `y` in `{-1, +1}` (or a real target for
/// regression).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Promise that examples lie in `B_p(radius)` and that some `w*` in
/// `B_q(weight_bound)`, `q` dual to `p`, has `y <w*, x> >= margin` on the
/// support.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCertificate {
    pub p: f64,
    pub radius: f64,
    pub weight_bound: f64,
    pub margin: f64,
    /// A separating vector, when known.
    pub witness: Option<Vec<f64>>,
}

impl MarginCertificate {
    fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0 && self.radius > 0.0 && self.weight_bound > 0.0 && self.margin > 0.0) {
            return Err(SqError::InvalidParameter(format!("invalid margin certificate {self:?}")));
        }
        if self.margin > self.radius * self.weight_bound * (1.0 + 1e-12) {
            return Err(SqError::InvalidParameter("margin exceeds radius times weight bound".into()));
        }
        Ok(())
    }

    /// Checks the promise on the given examples (norm, label and, with a
    /// witness, margin).
    pub fn holds_on<'a>(&self, examples: impl IntoIterator<Item = &'a Example>) -> bool {
        let q = conjugate(self.p);
        let witness_ok = self.witness.as_ref().map_or(true, |w| lp_norm(w, q) <= self.weight_bound * (1.0 + 1e-12));
        witness_ok
            && examples.into_iter().all(|e| {
                lp_norm(&e.x, self.p) <= self.radius * (1.0 + 1e-12)
                    && e.y.abs() == 1.0
                    && self.witness.as_ref().map_or(true, |w| e.y * dot(w, &e.x) >= self.margin * (1.0 - 1e-12))
            })
    }
}

/// Violation-rate query parameter and stopping threshold: with
/// `VSTAT(ceil(16/eps))`, an answer below `3 eps / 4` certifies a rate below
/// `eps`, and an answer at or above it certifies a rate of at least `eps / 2`.
pub fn stopping_rule(eps: f64) -> (f64, f64) {
    ((16.0 / eps).ceil(), 0.75 * eps)
}

/// Update bound `R^2 W^2 / (2 gamma / 3 - eta)^2` of the margin perceptron
/// driven by counterexample estimates within `gamma / (3W)`.
pub fn perceptron_update_bound(radius: f64, weight_bound: f64, margin: f64, eta: f64) -> f64 {
    let gap = 2.0 * margin / 3.0 - eta;
    (radius * weight_bound / gap).powi(2)
}

/// `VSTAT` parameter of the counterexample queries of the margin perceptron:
/// `2 (12 K)^2 (W R / gamma)^2 / eps` up to rounding.
pub fn perceptron_vstat_bound(level: f64, radius: f64, weight_bound: f64, margin: f64, eps: f64) -> f64 {
    2.0 * (12.0 * level).powi(2) * (weight_bound * radius / margin).powi(2) / eps
}

/// One update of a counterexample-driven learner.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub weights_before: Vec<f64>,
    /// Estimated violation rate.
    pub violation_estimate: f64,
    /// Mean-counterexample estimate before projection.
    pub estimate: Vec<f64>,
    /// The estimate after projection onto the known constraints.
    pub projected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerReport {
    pub weights: Vec<f64>,
    pub updates: usize,
    pub update_bound: f64,
    pub queries: usize,
    pub max_vstat_n: f64,
    pub trace: Vec<UpdateRecord>,
}

fn violation(w: &[f64], e: &Example, eta: f64) -> bool {
    e.y * dot(w, &e.x) <= eta
}

/// Estimates `P(A)` to relative error `rho` with a conditional `VSTAT`
/// query, given `P(A) >= alpha`.
fn event_mass<'a>(
    h: &OracleHandle<Example>,
    event: &(dyn Fn(&Example) -> f64 + Sync + 'a),
    alpha: f64,
    rho: f64,
) -> Result<f64> {
    let one = |_: &Example| 1.0;
    h.conditional_vstat(&one, event, alpha, (1.0 / (rho * rho)).ceil())
}

/// Estimate of `E[y x | A]` to `l_2` error `err`: frame coefficients of
/// `y x 1_A / R`, split into positive and negative parts, are read with
/// conditional `VSTAT` queries, synthesised and divided by the estimated
/// mass of `A`.
fn counterexample_l2(
    h: &OracleHandle<Example>,
    dim: usize,
    event: &(dyn Fn(&Example) -> f64 + Sync),
    radius: f64,
    alpha: f64,
    err: f64,
) -> Result<Vec<f64>> {
    let frame = KashinFrame::shared(dim)?;
    let n = frame.size();
    let level = frame.level();
    let scale = (n as f64).sqrt() / level;
    let rho = err / (4.0 * radius);
    let mass = event_mass(h, event, alpha, rho)?;
    let nz = (4.0 * level * radius / err).powi(2).ceil();
    let coords = |e: &Example, out: &mut [f64]| {
        let x: Vec<f64> = e.x.iter().map(|v| e.y * v / radius).collect();
        let mut a = vec![0.0; n];
        let achieved = frame.represent_into(&x, &mut a);
        if achieved > level || lp_norm(&x, 2.0) > 1.0 + SUPPORT_SLACK {
            out.fill(f64::NAN);
            return;
        }
        for j in 0..n {
            let v = a[j] * scale;
            out[j] = v.max(0.0);
            out[n + j] = (-v).max(0.0);
        }
    };
    let v = h.conditional_vstat_batch(2 * n, &coords, event, alpha, nz)?;
    let coef: Vec<f64> = (0..n).map(|j| (v[j] - v[n + j]) / scale).collect();
    let mass = mass.max(alpha / 2.0);
    Ok(frame.synthesize(&coef).iter().map(|z| z * radius / mass).collect())
}

/// `l_inf` variant of [`counterexample_l2`] with coordinate queries.
fn counterexample_linf(
    h: &OracleHandle<Example>,
    dim: usize,
    event: &(dyn Fn(&Example) -> f64 + Sync),
    radius: f64,
    alpha: f64,
    err: f64,
) -> Result<Vec<f64>> {
    let rho = err / (4.0 * radius);
    let mass = event_mass(h, event, alpha, rho)?;
    let nz = (4.0 * radius / err).powi(2).ceil();
    let coords = |e: &Example, out: &mut [f64]| {
        for j in 0..dim {
            let v = e.y * e.x[j] / radius;
            out[j] = v.max(0.0);
            out[dim + j] = (-v).max(0.0);
        }
    };
    let v = h.conditional_vstat_batch(2 * dim, &coords, event, alpha, nz)?;
    let mass = mass.max(alpha / 2.0);
    Ok((0..dim).map(|j| (v[j] - v[dim + j]) * radius / mass).collect())
}

/// Euclidean projection onto `{v : <w, v> <= eta} ∩ B_2(R)` (nonempty for
/// `eta >= 0`).
pub fn project_halfspace_ball(v: &[f64], w: &[f64], eta: f64, radius: f64) -> Vec<f64> {
    let ball = |u: &[f64]| -> Vec<f64> {
        let n = lp_norm(u, 2.0);
        if n <= radius {
            u.to_vec()
        } else {
            u.iter().map(|x| x * radius / n).collect()
        }
    };
    let wn = lp_norm(w, 2.0);
    if wn == 0.0 {
        return ball(v);
    }
    let on_ball = ball(v);
    if dot(w, &on_ball) <= eta {
        return on_ball;
    }
    let excess = (dot(w, v) - eta).max(0.0) / (wn * wn);
    let on_plane: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - excess * b).collect();
    if lp_norm(&on_plane, 2.0) <= radius {
        return on_plane;
    }
    // both constraints active: nearest point of the circle where the
    // hyperplane meets the sphere
    let unit: Vec<f64> = w.iter().map(|x| x / wn).collect();
    let height = eta / wn;
    let along = dot(v, &unit);
    let perp: Vec<f64> = v.iter().zip(&unit).map(|(a, u)| a - along * u).collect();
    let pn = lp_norm(&perp, 2.0);
    let spread = (radius * radius - height * height).max(0.0).sqrt();
    unit.iter()
        .zip(&perp)
        .map(|(u, p)| height * u + if pn > 0.0 { spread * p / pn } else { 0.0 })
        .collect()
}

fn vstat_max(ledger: &QueryLedger) -> f64 {
    ledger.max_vstat_n
}

/// Margin perceptron with statistical queries on examples in `B_2(R)`.
/// Each round asks whether `P(y <w, x> <= eta) < eps`; if not, it estimates
/// the mean violating example to `l_2` error `gamma / (3W)`, projects it
/// onto `{<w, .> <= eta} ∩ B_2(R)` and adds it to `w`.
pub fn margin_perceptron_sq(
    h: &OracleHandle<Example>,
    dim: usize,
    cert: &MarginCertificate,
    eps: f64,
    eta: f64,
    init: Option<Vec<f64>>,
) -> Result<LearnerReport> {
    cert.validate()?;
    if cert.p != 2.0 {
        return Err(SqError::InvalidParameter("margin perceptron needs an l_2 certificate".into()));
    }
    if !(eps > 0.0 && eps < 1.0) || !(eta >= 0.0 && eta < 2.0 * cert.margin / 3.0) {
        return Err(SqError::InvalidParameter(format!("need eps in (0, 1) and 0 <= eta < 2 gamma / 3, got {eps}, {eta}")));
    }
    let (n_stop, threshold) = stopping_rule(eps);
    let bound = perceptron_update_bound(cert.radius, cert.weight_bound, cert.margin, eta);
    let err = cert.margin / (3.0 * cert.weight_bound);
    let alpha = eps / 2.0;
    let start = h.ledger().queries;
    let mut w = init.unwrap_or_else(|| vec![0.0; dim]);
    let mut trace = Vec::new();
    loop {
        let wv = w.clone();
        let event = move |e: &Example| if violation(&wv, e, eta) { 1.0 } else { 0.0 };
        let rate = h.query_vstat(&event, n_stop)?;
        if rate < threshold {
            break;
        }
        if trace.len() as f64 >= bound {
            return Err(SqError::UpdateBound { updates: trace.len() + 1, bound });
        }
        let estimate = counterexample_l2(h, dim, &event, cert.radius, alpha, err)?;
        let projected = project_halfspace_ball(&estimate, &w, eta, cert.radius);
        let before = w.clone();
        w.iter_mut().zip(&projected).for_each(|(a, b)| *a += b);
        trace.push(UpdateRecord { weights_before: before, violation_estimate: rate, estimate, projected });
    }
    let ledger = h.ledger();
    Ok(LearnerReport {
        weights: w,
        updates: trace.len(),
        update_bound: bound,
        queries: ledger.queries - start,
        max_vstat_n: vstat_max(&ledger),
        trace,
    })
}

/// Link of the `p`-norm algorithm: `w = grad (1/2)||theta||_p^2`.
pub fn pnorm_link(theta: &[f64], p: f64) -> Vec<f64> {
    let n = lp_norm(theta, p);
    if n == 0.0 {
        return vec![0.0; theta.len()];
    }
    theta.iter().map(|t| t.signum() * (t.abs() / n).powf(p - 1.0) * n).collect()
}

/// Exponent the learner runs with for `l_p` examples: `p` itself, or
/// `max(2, 2 ln d)` for `p = inf`.
pub fn pnorm_exponent(p: f64, dim: usize) -> f64 {
    if p.is_infinite() {
        (2.0 * (dim as f64).ln()).max(2.0)
    } else {
        p
    }
}

/// Update bound of [`pnorm_learn`]: `(p' - 1) R'^2 W^2 / (2 gamma / 3)^2`
/// with `p'` from [`pnorm_exponent`], `R' = d^{1/p'} R` for `p = inf` and
/// `R' = R + gamma / (6W)` otherwise.
pub fn pnorm_update_bound(p: f64, dim: usize, cert: &MarginCertificate) -> f64 {
    let pa = pnorm_exponent(p, dim);
    let reach = if p.is_infinite() {
        (dim as f64).powf(1.0 / pa) * cert.radius
    } else {
        cert.radius + cert.margin / (6.0 * cert.weight_bound)
    };
    (pa - 1.0) * (reach * cert.weight_bound / (2.0 * cert.margin / 3.0)).powi(2)
}

/// `p`-norm halfspace learner for `p` in `[2, inf]`. Mistakes are
/// `y <w, x> <= 0`; each update adds an estimate of the mean mistake to the
/// dual accumulator `theta` and sets `w = grad (1/2)||theta||_{p'}^2`.
/// For `p = 2` this is [`margin_perceptron_sq`] with `eta = 0`. For
/// `p = inf` the mean is estimated coordinate-wise with conditional `VSTAT`
/// to `l_inf` error `gamma / (3 (1 + sqrt(e)) W)` and clamped to the box; for
/// other `p` the mistake mass is peeled off with a `STAT` ring estimator to
/// `l_p` error `gamma / (6W)`.
pub fn pnorm_learn(
    h: &OracleHandle<Example>,
    dim: usize,
    cert: &MarginCertificate,
    eps: f64,
    init: Option<Vec<f64>>,
) -> Result<LearnerReport> {
    cert.validate()?;
    let p = cert.p;
    if p == 2.0 {
        return margin_perceptron_sq(h, dim, cert, eps, 0.0, init);
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(SqError::InvalidParameter(format!("need eps in (0, 1), got {eps}")));
    }
    let pa = pnorm_exponent(p, dim);
    let (n_stop, threshold) = stopping_rule(eps);
    let bound = pnorm_update_bound(p, dim, cert);
    let alpha = eps / 2.0;
    let start = h.ledger().queries;
    let r = cert.radius;
    let mut theta = vec![0.0; dim];
    let mut w = init.unwrap_or_else(|| vec![0.0; dim]);
    let mut trace = Vec::new();
    loop {
        let wv = w.clone();
        let event = move |e: &Example| if violation(&wv, e, 0.0) { 1.0 } else { 0.0 };
        let rate = h.query_vstat(&event, n_stop)?;
        if rate < threshold {
            break;
        }
        if trace.len() as f64 >= bound {
            return Err(SqError::UpdateBound { updates: trace.len() + 1, bound });
        }
        let (estimate, projected) = if p.is_infinite() {
            let err = cert.margin / (3.0 * (1.0 + std::f64::consts::E.sqrt()) * cert.weight_bound);
            let est = counterexample_linf(h, dim, &event, r, alpha, err)?;
            let clamped = est.iter().map(|v| v.clamp(-r, r)).collect();
            (est, clamped)
        } else {
            let err = cert.margin / (6.0 * cert.weight_bound);
            let mass = event_mass(h, &event, alpha, err / (4.0 * r))?.max(alpha / 2.0);
            // E[y x 1_A] / R to l_p error alpha err / (2R) keeps the
            // normalised mean within err
            let map = |e: &Example, out: &mut [f64]| {
                let a = event(e);
                for (o, v) in out.iter_mut().zip(&e.x) {
                    *o = a * e.y * v / r;
                }
            };
            let z = estimate_lq_high(h, dim, p, &map, alpha * err / (2.0 * r))?;
            let est: Vec<f64> = z.mean.iter().map(|v| v * r / mass).collect();
            (est.clone(), est)
        };
        theta.iter_mut().zip(&projected).for_each(|(t, v)| *t += v);
        let before = std::mem::replace(&mut w, pnorm_link(&theta, pa));
        trace.push(UpdateRecord { weights_before: before, violation_estimate: rate, estimate, projected });
    }
    let ledger = h.ledger();
    Ok(LearnerReport {
        weights: w,
        updates: trace.len(),
        update_bound: bound,
        queries: ledger.queries - start,
        max_vstat_n: vstat_max(&ledger),
        trace,
    })
}

/// Scalar convex loss `l(a, z)` of a linear prediction `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `(a - z)^2 / 2`.
    Squared,
    /// `ln(1 + exp(-z a))` for labels in `{-1, +1}`.
    Logistic,
    /// `max(0, 1 - z a)`.
    Hinge,
    /// `|a - z|`.
    Absolute,
}

impl Loss {
    pub fn value(&self, a: f64, z: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * (a - z) * (a - z),
            Loss::Logistic => {
                let m = -z * a;
                if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                }
            }
            Loss::Hinge => (1.0 - z * a).max(0.0),
            Loss::Absolute => (a - z).abs(),
        }
    }

    /// A derivative in `a`.
    pub fn derivative(&self, a: f64, z: f64) -> f64 {
        match self {
            Loss::Squared => a - z,
            Loss::Logistic => -z / (1.0 + (z * a).exp()),
            Loss::Hinge => {
                if z * a < 1.0 {
                    -z
                } else {
                    0.0
                }
            }
            Loss::Absolute => (a - z).signum(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Loss::Squared | Loss::Logistic)
    }
}

/// Generalized linear model `E[l(<w, x>, z)] + lambda ||x||_2^2` over the
/// predictor ball `B_p(R)`, for inputs `w` with `||w||_q <= W` and targets
/// `|z| <= Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmSpec {
    pub loss: Loss,
    pub lambda: f64,
    pub p: f64,
    pub input_bound: f64,
    pub predictor_radius: f64,
    pub target_bound: f64,
}

/// Solver chosen by [`glm_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlmMethod {
    Mirror,
    Accelerated,
    StronglyConvex,
}

struct GlmObjective {
    spec: GlmSpec,
}

impl Objective<Example> for GlmObjective {
    fn value(&self, x: &[f64], e: &Example) -> f64 {
        self.spec.loss.value(dot(&e.x, x), e.y) + self.spec.lambda * dot(x, x)
    }

    fn gradient(&self, x: &[f64], e: &Example, out: &mut [f64]) {
        let g = self.spec.loss.derivative(dot(&e.x, x), e.y);
        for ((o, w), xi) in out.iter_mut().zip(&e.x).zip(x) {
            *o = g * w + 2.0 * self.spec.lambda * xi;
        }
    }
}

impl GlmSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.p >= 1.0
            && self.input_bound > 0.0
            && self.predictor_radius > 0.0
            && self.target_bound >= 0.0
            && [self.lambda, self.input_bound, self.predictor_radius, self.target_bound].iter().all(|v| v.is_finite());
        if !ok {
            return Err(SqError::InvalidParameter(format!("invalid GLM specification {self:?}")));
        }
        if self.lambda > 0.0 && self.p != 2.0 {
            return Err(SqError::InvalidParameter("regularized GLMs are solved over l_2 balls".into()));
        }
        Ok(())
    }

    /// Lipschitz and smoothness constants of the loss in its first argument
    /// on `|a| <= W R`.
    fn loss_constants(&self) -> (f64, Option<f64>, f64) {
        let span = self.input_bound * self.predictor_radius;
        let z = self.target_bound;
        match self.loss {
            Loss::Squared => (span + z, Some(1.0), 0.5 * (span + z).powi(2)),
            Loss::Logistic => (1.0, Some(0.25), span.exp().ln_1p()),
            Loss::Hinge => (1.0, None, 1.0 + span),
            Loss::Absolute => (1.0, None, span + z),
        }
    }

    /// `L0 = L_l W + 2 lambda R`, `L1 = L_l' W^2 + 2 lambda`, `kappa = 2 lambda`
    /// and `B = max |l| + lambda R^2`.
    pub fn constants(&self) -> Constants {
        let (l0, l1, b) = self.loss_constants();
        let r = self.predictor_radius;
        let w = self.input_bound;
        // the regularizer gradient is measured in the dual norm of the ball
        let reg = 2.0 * self.lambda * r;
        Constants {
            lipschitz: Some(l0 * w + reg),
            smoothness: l1.map(|s| s * w * w + 2.0 * self.lambda),
            strong_convexity: (self.lambda > 0.0).then_some(2.0 * self.lambda),
            value_bound: Some(b + self.lambda * r * r),
        }
    }

    pub fn problem(&self, dim: usize) -> Result<StochasticProblem<Example>> {
        self.validate()?;
        Ok(StochasticProblem::new(
            ProxSetup::new(dim, self.p, self.predictor_radius)?,
            Arc::new(GlmObjective { spec: self.clone() }),
            self.constants(),
        ))
    }

    pub fn method(&self) -> GlmMethod {
        if self.lambda > 0.0 {
            GlmMethod::StronglyConvex
        } else if self.loss.is_smooth() && self.p <= 2.0 {
            GlmMethod::Accelerated
        } else {
            GlmMethod::Mirror
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmReport {
    pub method: GlmMethod,
    pub solve: SolveReport,
}

/// Iterations for each solver to certify accuracy `eps` (half from the
/// rate, half from the gradient error).
pub fn glm_iterations(method: GlmMethod, problem: &StochasticProblem<Example>, eps: f64) -> Result<usize> {
    let setup = &problem.setup;
    let diam = setup.diameter();
    Ok(match method {
        GlmMethod::Mirror => {
            let r = setup.uniform_convexity();
            (r * diam * (2.0 * problem.lipschitz()? / eps).powf(r)).ceil() as usize
        }
        GlmMethod::Accelerated => (8.0 * problem.smoothness()? * diam / eps).sqrt().ceil() as usize,
        GlmMethod::StronglyConvex => {
            let kappa = problem.strong_convexity()?;
            let eta = eps / 2.0;
            let m = match problem.constants.smoothness {
                Some(l1) => 2.0 * l1,
                None => 2.0 * problem.lipschitz()?.powi(2) / eta,
            };
            let mu = kappa / 2.0;
            let r = setup.radius;
            let steps = (m / mu) * (m * r * r / eps).ln();
            (steps.ceil() as usize).saturating_sub(1).max(1)
        }
    })
}

/// Solves a GLM to accuracy `eps`: strongly convex solver when regularized,
/// accelerated method for smooth losses over `l_p` with `p <= 2`, mirror
/// descent otherwise. The gradient error is `eps/2`, `eps/6` and `eps/2`
/// respectively.
pub fn glm_solve(h: &OracleHandle<Example>, spec: &GlmSpec, dim: usize, eps: f64) -> Result<GlmReport> {
    if !(eps > 0.0) {
        return Err(SqError::InvalidParameter(format!("accuracy must be positive, got {eps}")));
    }
    let problem = spec.problem(dim)?;
    let method = spec.method();
    let t = glm_iterations(method, &problem, eps)?;
    let solve = match method {
        GlmMethod::Mirror => mirror_descent(h, &problem, t, eps / 2.0, false)?,
        GlmMethod::Accelerated => accelerated_descent(h, &problem, t, eps / 6.0)?,
        GlmMethod::StronglyConvex => strongly_convex_solve(h, &problem, t, eps / 2.0)?,
    };
    Ok(GlmReport { method, solve })
}
