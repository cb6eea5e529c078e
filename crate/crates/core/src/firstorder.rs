//! Stochastic convex optimization from inexact gradients.
//!
//! The objective is `F(x) = E_w[f(x, w)]` over an origin-centred `l_p` ball.
//! Gradients of `F` are obtained by mean estimation on the gradients of
//! `f(x, .)` in the dual norm, which gives an additive error uniform over the
//! body; the solvers then run mirror descent, an accelerated method built on
//! estimate sequences, or a projected gradient method for strongly convex
//! objectives.

use std::sync::Arc;

use crate::error::{check_dim, Result, SqError};
use crate::geometry::{conjugate, lp_norm, ProxSetup};
use crate::meanest::{estimate_l2_kashin, estimate_lq, KashinFrame};
use crate::oracle::OracleHandle;

/// Per-sample convex loss `f(x, w)`.
pub trait Objective<W>: Send + Sync {
    fn value(&self, x: &[f64], w: &W) -> f64;
    /// A subgradient of `f(., w)` at `x`.
    fn gradient(&self, x: &[f64], w: &W, out: &mut [f64]);
}

/// Objective defined by two closures.
pub struct FnObjective<W> {
    #[allow(clippy::type_complexity)]
    value: Box<dyn Fn(&[f64], &W) -> f64 + Send + Sync>,
    #[allow(clippy::type_complexity)]
    gradient: Box<dyn Fn(&[f64], &W, &mut [f64]) + Send + Sync>,
}

impl<W> FnObjective<W> {
    pub fn new(
        value: impl Fn(&[f64], &W) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &W, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnObjective { value: Box::new(value), gradient: Box::new(gradient) }
    }
}

impl<W> Objective<W> for FnObjective<W> {
    fn value(&self, x: &[f64], w: &W) -> f64 {
        (self.value)(x, w)
    }

    fn gradient(&self, x: &[f64], w: &W, out: &mut [f64]) {
        (self.gradient)(x, w, out)
    }
}

/// `f(x, w) = <w, x>`.
pub struct Linear;

impl Objective<Vec<f64>> for Linear {
    fn value(&self, x: &[f64], w: &Vec<f64>) -> f64 {
        x.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, _x: &[f64], w: &Vec<f64>, out: &mut [f64]) {
        out.copy_from_slice(w);
    }
}

/// `f(x, w) = ||x - w||_2^2 / 2`.
pub struct SquaredDistance;

impl Objective<Vec<f64>> for SquaredDistance {
    fn value(&self, x: &[f64], w: &Vec<f64>) -> f64 {
        0.5 * x.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], w: &Vec<f64>, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(w) {
            *o = a - b;
        }
    }
}

/// Regularity constants of a problem. Each is a bound that must hold for
/// every sample: `lipschitz` bounds the dual norm of every subgradient of
/// `f(., w)` on the body, `value_bound` bounds `|f(x, w)|`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Constants {
    pub lipschitz: Option<f64>,
    pub smoothness: Option<f64>,
    pub strong_convexity: Option<f64>,
    pub value_bound: Option<f64>,
}

/// `min_{x in K} E_w[f(x, w)]` with `K` the ball of a [`ProxSetup`].
pub struct StochasticProblem<W> {
    pub setup: ProxSetup,
    pub objective: Arc<dyn Objective<W>>,
    pub constants: Constants,
}

impl<W> StochasticProblem<W> {
    pub fn new(setup: ProxSetup, objective: Arc<dyn Objective<W>>, constants: Constants) -> Self {
        StochasticProblem { setup, objective, constants }
    }

    pub fn dim(&self) -> usize {
        self.setup.dim
    }

    fn require(&self, name: &str, v: Option<f64>) -> Result<f64> {
        match v {
            Some(c) if c > 0.0 && c.is_finite() => Ok(c),
            _ => Err(SqError::InvalidParameter(format!("problem needs a positive {name} constant"))),
        }
    }

    pub fn lipschitz(&self) -> Result<f64> {
        self.require("Lipschitz", self.constants.lipschitz)
    }

    pub fn smoothness(&self) -> Result<f64> {
        self.require("smoothness", self.constants.smoothness)
    }

    pub fn strong_convexity(&self) -> Result<f64> {
        self.require("strong convexity", self.constants.strong_convexity)
    }

    pub fn value_bound(&self) -> Result<f64> {
        self.require("value bound", self.constants.value_bound)
    }
}

/// Gradient returned by an inexact oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAnswer {
    pub gradient: Vec<f64>,
    pub queries: usize,
}

/// Gradient `g` with `|<g - grad F(x), y - u>| <= eta` for all `y, u` in the
/// body: mean estimation of `grad f(x, w) / L0` in the dual norm to error
/// `eta / (2 L0 R)`.
pub fn global_gradient<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    problem: &StochasticProblem<W>,
    x: &[f64],
    eta: f64,
) -> Result<GradientAnswer> {
    check_dim(problem.dim(), x.len())?;
    let l0 = problem.lipschitz()?;
    let d = problem.dim();
    let q = conjugate(problem.setup.p);
    let obj = problem.objective.clone();
    let xv = x.to_vec();
    let map = move |w: &W, out: &mut [f64]| {
        obj.gradient(&xv, w, out);
        out.iter_mut().for_each(|v| *v /= l0);
    };
    let est = estimate_lq(h, d, q, &map, eta / (2.0 * l0 * problem.setup.radius))?;
    Ok(GradientAnswer { gradient: est.mean.iter().map(|v| v * l0).collect(), queries: est.queries })
}

/// Answer of the oracle for strongly convex objectives: a value `F~` and
/// gradient `g` such that
/// `F~ + <g, y - x> + (mu/2)||y - x||^2 <= F(y) <= F~ + <g, y - x> + (M/2)||y - x||^2 + eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongOracleAnswer {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub mu: f64,
    pub m: f64,
    pub queries: usize,
}

/// `(eta, M, mu)` oracle in the Euclidean setup: gradient error
/// `sqrt(eta kappa) / 2` in `l_2`, value error `eta / 4` shifted down by
/// `eta / 2`, `mu = kappa / 2` and `M = 2 L1` (or `2 L0^2 / eta` for
/// non-smooth objectives).
pub fn strongly_convex_oracle<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    problem: &StochasticProblem<W>,
    x: &[f64],
    eta: f64,
) -> Result<StrongOracleAnswer> {
    if problem.setup.p != 2.0 {
        return Err(SqError::InvalidParameter("strongly convex oracle needs the Euclidean setup".into()));
    }
    check_dim(problem.dim(), x.len())?;
    let l0 = problem.lipschitz()?;
    let kappa = problem.strong_convexity()?;
    let b = problem.value_bound()?;
    let m = match problem.constants.smoothness {
        Some(l1) => 2.0 * l1,
        None => 2.0 * l0 * l0 / eta,
    };
    let d = problem.dim();
    let obj = problem.objective.clone();
    let xv = x.to_vec();
    let grad_map = |w: &W, out: &mut [f64]| {
        obj.gradient(&xv, w, out);
        out.iter_mut().for_each(|v| *v /= l0);
    };
    let frame = KashinFrame::shared(d)?;
    let est = estimate_l2_kashin(h, &frame, &grad_map, (eta * kappa).sqrt() / (2.0 * l0))?;
    let value_fn = |w: &W| obj.value(&xv, w) / b;
    let v = h.query_stat(&value_fn, eta / (4.0 * b))?;
    Ok(StrongOracleAnswer {
        value: v * b - eta / 2.0,
        gradient: est.mean.iter().map(|g| g * l0).collect(),
        mu: kappa / 2.0,
        m,
        queries: est.queries + 1,
    })
}

/// Output of a first-order solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// Certified bound on `F(x) - min F` when every oracle answer is valid.
    pub gap_bound: f64,
    pub iterations: usize,
    pub queries: usize,
    /// Query points, in order, when tracing was requested.
    pub trace: Vec<Vec<f64>>,
}

fn initial_bound<W>(problem: &StochasticProblem<W>) -> f64 {
    let lip = problem.constants.lipschitz.map(|l| l * problem.setup.radius).unwrap_or(f64::INFINITY);
    let val = problem.constants.value_bound.map(|b| 2.0 * b).unwrap_or(f64::INFINITY);
    lip.min(val)
}

/// Mirror descent with step `(1/L0)(r D / T)^{1 - 1/r}` from the minimiser of
/// the potential; returns the average of the `T` query points. The gap is at
/// most `L0 (r D / T)^{1/r} + eta`.
pub fn mirror_descent<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    problem: &StochasticProblem<W>,
    iterations: usize,
    eta: f64,
    trace: bool,
) -> Result<SolveReport> {
    let setup = &problem.setup;
    let x0 = setup.center();
    if iterations == 0 {
        return Ok(SolveReport { x: x0, gap_bound: initial_bound(problem), iterations: 0, queries: 0, trace: vec![] });
    }
    let l0 = problem.lipschitz()?;
    let r = setup.uniform_convexity();
    let diam = setup.diameter();
    let t = iterations as f64;
    let step = (r * diam / t).powf(1.0 - 1.0 / r) / l0;
    let mut x = x0;
    let mut sum = vec![0.0; setup.dim];
    let mut queries = 0;
    let mut points = Vec::new();
    for _ in 0..iterations {
        let g = global_gradient(h, problem, &x, eta)?;
        queries += g.queries;
        sum.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        if trace {
            points.push(x.clone());
        }
        x = setup.prox_step(&x, &g.gradient, step)?;
    }
    if trace {
        points.push(x);
    }
    Ok(SolveReport {
        x: sum.iter().map(|s| s / t).collect(),
        gap_bound: l0 * (r * diam / t).powf(1.0 / r) + eta,
        iterations,
        queries,
        trace: points,
    })
}

/// Step size used by [`mirror_descent`].
pub fn mirror_step(setup: &ProxSetup, lipschitz: f64, iterations: usize) -> f64 {
    let r = setup.uniform_convexity();
    (r * setup.diameter() / iterations as f64).powf(1.0 - 1.0 / r) / lipschitz
}

/// Accelerated method for `L1`-smooth objectives with the
/// `2`-uniformly convex potentials. Each step takes a prox step of length
/// `1/L1` from `x_t` to get `y_t`, minimises the weighted gradient model
/// `sum_i (i+1)/2 <g_i, x> + L1 Psi(x)` to get `z_t`, and moves to
/// `x_{t+1} = 2/(t+3) z_t + (t+1)/(t+3) y_t`. Returns the last `y`, with gap
/// at most `4 L1 D / (T (T+1)) + 3 eta`.
pub fn accelerated_descent<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    problem: &StochasticProblem<W>,
    iterations: usize,
    eta: f64,
) -> Result<SolveReport> {
    let setup = &problem.setup;
    if setup.uniform_convexity() != 2.0 {
        return Err(SqError::InvalidParameter("accelerated method needs a strongly convex potential".into()));
    }
    let x0 = setup.center();
    if iterations == 0 {
        return Ok(SolveReport { x: x0, gap_bound: initial_bound(problem), iterations: 0, queries: 0, trace: vec![] });
    }
    let l1 = problem.smoothness()?;
    let mut x = x0;
    let mut y = x.clone();
    let mut weighted = vec![0.0; setup.dim];
    let mut queries = 0;
    for t in 0..iterations {
        let g = global_gradient(h, problem, &x, eta)?;
        queries += g.queries;
        y = setup.prox_step(&x, &g.gradient, 1.0 / l1)?;
        let a = (t as f64 + 1.0) / 2.0;
        weighted.iter_mut().zip(&g.gradient).for_each(|(s, v)| *s += a * v);
        let c: Vec<f64> = weighted.iter().map(|v| -v / l1).collect();
        let z = setup.argmin_linear(&c)?;
        let tz = 2.0 / (t as f64 + 3.0);
        x = z.iter().zip(&y).map(|(zi, yi)| tz * zi + (1.0 - tz) * yi).collect();
    }
    let t = iterations as f64;
    Ok(SolveReport {
        x: y,
        gap_bound: 4.0 * l1 * setup.diameter() / (t * (t + 1.0)) + 3.0 * eta,
        iterations,
        queries,
        trace: vec![],
    })
}

/// Projected gradient method for strongly convex objectives on a Euclidean
/// ball: `x_{t+1} = proj(x_t - g_t / M)` for `t = 0..=T`, returning the
/// average of `x_1..x_{T+1}` with weights `(1 - mu/M)^{-t}`. The gap is at
/// most `(M R^2 / 2) exp(-(mu/M)(T+1)) + eta`.
pub fn strongly_convex_solve<W: Send + Sync + 'static>(
    h: &OracleHandle<W>,
    problem: &StochasticProblem<W>,
    iterations: usize,
    eta: f64,
) -> Result<SolveReport> {
    let setup = &problem.setup;
    if setup.p != 2.0 {
        return Err(SqError::InvalidParameter("strongly convex solver needs the Euclidean setup".into()));
    }
    let mut x = setup.center();
    let mut acc = vec![0.0; setup.dim];
    let mut weight_sum = 0.0;
    let mut queries = 0;
    let mut ratio = 0.0;
    let mut m_used = 0.0;
    // weights are rescaled by (1 - mu/M)^{T} to avoid overflow
    for t in 0..=iterations {
        let o = strongly_convex_oracle(h, problem, &x, eta)?;
        queries += o.queries;
        ratio = o.mu / o.m;
        m_used = o.m;
        let next: Vec<f64> = x.iter().zip(&o.gradient).map(|(a, g)| a - g / o.m).collect();
        x = project_ball(&next, setup.radius);
        let w = (1.0 - ratio).powi((iterations - t) as i32);
        acc.iter_mut().zip(&x).for_each(|(s, v)| *s += w * v);
        weight_sum += w;
    }
    let r = setup.radius;
    Ok(SolveReport {
        x: acc.iter().map(|v| v / weight_sum).collect(),
        gap_bound: 0.5 * m_used * r * r * (-ratio * (iterations as f64 + 1.0)).exp() + eta,
        iterations,
        queries,
        trace: vec![],
    })
}

/// Euclidean projection onto the origin-centred ball of radius `r`.
pub fn project_ball(x: &[f64], r: f64) -> Vec<f64> {
    let n = lp_norm(x, 2.0);
    if n <= r {
        x.to_vec()
    } else {
        x.iter().map(|v| v * r / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Backend, FiniteDistribution, NoisePolicy};

    fn linear_problem(c: Vec<f64>, p: f64) -> (OracleHandle<Vec<f64>>, StochasticProblem<Vec<f64>>) {
        let d = c.len();
        let l0 = lp_norm(&c, conjugate(p));
        let h = OracleHandle::new(Arc::new(FiniteDistribution::point_mass(c)), Backend::exact(NoisePolicy::Zero), 0);
        let prob = StochasticProblem::new(
            ProxSetup::new(d, p, 1.0).unwrap(),
            Arc::new(Linear),
            Constants { lipschitz: Some(l0), value_bound: Some(l0), ..Default::default() },
        );
        (h, prob)
    }

    #[test]
    fn zero_gradient_single_step_stays_at_start() {
        let (h, prob) = linear_problem(vec![0.0, 0.0, 0.0], 2.0);
        let prob = StochasticProblem { constants: Constants { lipschitz: Some(1.0), ..prob.constants }, ..prob };
        let r = mirror_descent(&h, &prob, 1, 0.01, false).unwrap();
        assert_eq!(r.x, vec![0.0; 3]);
    }

    #[test]
    fn no_iterations_returns_start() {
        let (h, prob) = linear_problem(vec![0.5, 0.5], 2.0);
        let r = mirror_descent(&h, &prob, 0, 0.01, false).unwrap();
        assert_eq!(r.x, vec![0.0, 0.0]);
        assert_eq!(r.queries, 0);
        assert!(r.gap_bound.is_finite());
    }

    #[test]
    fn missing_constants_are_rejected() {
        let (h, prob) = linear_problem(vec![0.5, 0.5], 2.0);
        assert!(matches!(accelerated_descent(&h, &prob, 3, 0.01), Err(SqError::InvalidParameter(_))));
        assert!(matches!(strongly_convex_solve(&h, &prob, 3, 0.01), Err(SqError::InvalidParameter(_))));
    }

    #[test]
    fn gradient_oracle_on_point_mass_is_exact() {
        let (h, prob) = linear_problem(vec![0.3, -0.4], 2.0);
        let g = global_gradient(&h, &prob, &[0.0, 0.0], 0.01).unwrap();
        assert!((g.gradient[0] - 0.3).abs() < 1e-9 && (g.gradient[1] + 0.4).abs() < 1e-9);
    }
}
