//! Executes one experiment config and checks its hard assertions.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sqopt::apps::{margin_perceptron_sq, pnorm_learn, Example};
use sqopt::cutplane::{anneal_optimize, cog_optimize, AnnealConfig, BallBody, CogConfig};
use sqopt::firstorder::{
    accelerated_descent, mirror_descent, strongly_convex_solve, Constants, FnObjective, Linear, SquaredDistance,
    StochasticProblem,
};
use sqopt::geometry::{conjugate, dot, lp_norm, next_pow2, sub, ProxSetup};
use sqopt::meanest::{
    estimate_l2, estimate_lq, estimate_lq_low, low_q_choice, Estimate, L2Variant, LowQVariant, RingDecomposition,
};
use sqopt::oracle::{Backend, FiniteDistribution, NoisePolicy, OracleHandle, QueryLedger, SignHint};
use sqopt::synthetic::{family_distribution, margin_distribution, Family};

use crate::config::{BackendName, ExperimentConfig, FamilyName, HintName, MethodName, NoiseName, Task, VariantName};
use crate::CliError;

/// Outcome of one run. `hard` marks runs whose guarantee is deterministic
/// (exact backend, deterministic algorithm), where `achieved <= certified`
/// is asserted.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub task: String,
    pub dim: usize,
    pub q: f64,
    pub eps: f64,
    /// Smallest `STAT` tolerance used (infinite when none).
    pub tolerance: f64,
    /// Largest `VSTAT` parameter used (zero when none).
    pub vstat_n: f64,
    pub queries: usize,
    pub achieved: f64,
    pub certified: f64,
    pub seed: u64,
    pub ms: f64,
    pub hard: bool,
    pub failures: Vec<String>,
    /// Measurements reported but not asserted.
    pub notes: Vec<String>,
    /// The resolved config that reproduces this run.
    pub config: String,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        RunReport { ms: 0.0, ..self.clone() } == RunReport { ms: 0.0, ..other.clone() }
    }
}

fn family(name: FamilyName) -> Family {
    match name {
        FamilyName::PointMass => Family::PointMass,
        FamilyName::Dense => Family::Dense,
        FamilyName::Sparse => Family::Sparse,
        FamilyName::MultiScale => Family::MultiScale,
        FamilyName::Vertices => Family::Vertices,
    }
}

fn backend(cfg: &ExperimentConfig) -> Backend {
    let o = &cfg.oracle;
    match o.backend {
        BackendName::Exact => Backend::exact(match o.noise {
            NoiseName::Zero => NoisePolicy::Zero,
            NoiseName::Uniform => NoisePolicy::Uniform,
            NoiseName::Adversarial => NoisePolicy::Adversarial(match o.hint {
                HintName::Plus => SignHint::Plus,
                HintName::Minus => SignHint::Minus,
                HintName::Alternating => SignHint::Alternating,
                HintName::Random => SignHint::Random,
            }),
        }),
        BackendName::Samples => Backend::samples(),
        BackendName::Ldp => Backend::ldp(o.privacy),
    }
}

fn is_exact(cfg: &ExperimentConfig) -> bool {
    cfg.oracle.backend == BackendName::Exact
}

struct Outcome {
    achieved: f64,
    certified: f64,
    hard: bool,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new(achieved: f64, certified: f64, hard: bool) -> Self {
        Outcome { achieved, certified, hard, failures: Vec::new(), notes: Vec::new() }
    }
}

/// Contract query count of the `l_q` estimator dispatched for `(d, q, eps)`.
pub fn contract_queries(dim: usize, q: f64, eps: f64) -> Result<usize, CliError> {
    let d = dim;
    let frame = 2 * d;
    Ok(if q.is_infinite() {
        d
    } else if q == 1.0 {
        next_pow2(d)
    } else if q < 2.0 {
        match low_q_choice(d, q, eps)? {
            LowQVariant::ViaL2 => frame,
            _ => {
                let top = RingDecomposition::new(d, q).top.max(-1);
                2 * (top + 1) as usize * d + d
            }
        }
    } else if q == 2.0 {
        frame
    } else {
        RingDecomposition::new(d, q).ring_count() * (frame + d) + d
    })
}

/// Query budget `3 d log2 d` that every estimator stays within.
pub fn query_budget(dim: usize) -> f64 {
    3.0 * dim as f64 * (dim.max(2) as f64).log2()
}

/// Upper-bound estimation complexity of `l_q` mean estimation up to
/// constants: `min(d^{2/q-1}/eps^2, (log d / eps)^p)` for `q < 2`, `1/eps^2`
/// for `q = 2` and `q = inf`, `(log d / eps)^2` otherwise.
pub fn complexity_formula(dim: usize, q: f64, eps: f64) -> f64 {
    let d = dim as f64;
    let logd = d.max(2.0).log2();
    if q < 2.0 {
        let p = conjugate(q);
        (d.powf(2.0 / q - 1.0) / (eps * eps)).min((logd / eps).powf(p))
    } else if q == 2.0 || q.is_infinite() {
        1.0 / (eps * eps)
    } else {
        (logd / eps).powi(2)
    }
}

fn mean_estimate(cfg: &ExperimentConfig) -> Result<(Outcome, QueryLedger), CliError> {
    let d = cfg.distribution.dim;
    let q = cfg.algorithm.q;
    let eps = cfg.algorithm.eps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dist = family_distribution(family(cfg.distribution.family), d, q, cfg.distribution.atoms, &mut rng);
    let truth = dist.mean_vector(d, |w, out| out.copy_from_slice(w));
    let h = OracleHandle::new(Arc::new(dist), backend(cfg), cfg.seed);
    let map = |w: &Vec<f64>, out: &mut [f64]| out.copy_from_slice(w);
    let mut randomized = false;
    let est: Estimate = match cfg.algorithm.variant {
        VariantName::Auto => estimate_lq(&h, d, q, &map, eps)?,
        VariantName::Kashin => estimate_l2(&h, d, &map, eps, L2Variant::Kashin)?,
        VariantName::Rotation => {
            randomized = true;
            estimate_l2(&h, d, &map, eps, L2Variant::Rotation { delta: cfg.algorithm.delta, seed: cfg.seed })?
        }
        VariantName::ViaL2 => estimate_lq_low(&h, d, q, &map, eps, LowQVariant::ViaL2)?,
        VariantName::VstatRings => estimate_lq_low(&h, d, q, &map, eps, LowQVariant::VstatRings)?,
    };
    let achieved = lp_norm(&sub(&est.mean, &truth), q);
    let mut out = Outcome::new(achieved, est.error_bound, is_exact(cfg) && !randomized);
    let ledger = h.ledger();
    if ledger.queries != est.queries {
        out.failures.push(format!("ledger shows {} queries, estimator reports {}", ledger.queries, est.queries));
    }
    Ok((out, ledger))
}

fn optimize(cfg: &ExperimentConfig) -> Result<(Outcome, QueryLedger), CliError> {
    let d = cfg.distribution.dim;
    let p = cfg.algorithm.q;
    let t = cfg.algorithm.iterations.unwrap_or(100);
    let eta = cfg.algorithm.eta.unwrap_or(cfg.algorithm.eps / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let setup = ProxSetup::new(d, p, 1.0)?;
    let method = cfg.algorithm.method;
    // linear objectives draw data from the dual ball, the others from the
    // primal ball so the unconstrained optimum is feasible
    let data_norm = if method == MethodName::Mirror { conjugate(p) } else { p };
    let dist = family_distribution(family(cfg.distribution.family), d, data_norm, cfg.distribution.atoms, &mut rng);
    let c = dist.mean_vector(d, |w, out| out.copy_from_slice(w));
    let h = OracleHandle::new(Arc::new(dist), backend(cfg), cfg.seed);
    let (report, gap) = match method {
        MethodName::Mirror => {
            let prob = StochasticProblem::new(
                setup,
                Arc::new(Linear),
                Constants { lipschitz: Some(1.0), value_bound: Some(1.0), ..Default::default() },
            );
            let r = mirror_descent(&h, &prob, t, eta, false)?;
            let gap = dot(&c, &r.x) + lp_norm(&c, conjugate(p));
            (r, gap)
        }
        MethodName::Accelerated => {
            // gradients x - w have dual norm at most ||x - w||_p <= 2
            let prob = StochasticProblem::new(
                setup,
                Arc::new(SquaredDistance),
                Constants { lipschitz: Some(2.0), smoothness: Some(1.0), value_bound: Some(2.0), ..Default::default() },
            );
            let r = accelerated_descent(&h, &prob, t, eta)?;
            let gap = 0.5 * lp_norm(&sub(&r.x, &c), 2.0).powi(2);
            (r, gap)
        }
        MethodName::StronglyConvex => {
            let obj = FnObjective::new(
                |x: &[f64], w: &Vec<f64>| 0.5 * dot(x, x) + dot(w, x),
                |x: &[f64], w: &Vec<f64>, out: &mut [f64]| {
                    for i in 0..x.len() {
                        out[i] = x[i] + w[i];
                    }
                },
            );
            let prob = StochasticProblem::new(
                setup,
                Arc::new(obj),
                Constants {
                    lipschitz: Some(2.0),
                    smoothness: Some(1.0),
                    strong_convexity: Some(1.0),
                    value_bound: Some(1.5),
                },
            );
            let r = strongly_convex_solve(&h, &prob, t, eta)?;
            let gap = 0.5 * lp_norm(&r.x.iter().zip(&c).map(|(a, b)| a + b).collect::<Vec<_>>(), 2.0).powi(2);
            (r, gap)
        }
    };
    Ok((Outcome::new(gap, report.gap_bound, is_exact(cfg)), h.ledger()))
}

fn perceptron(cfg: &ExperimentConfig) -> Result<(Outcome, QueryLedger), CliError> {
    let d = cfg.distribution.dim;
    let p = cfg.algorithm.q;
    let eps = cfg.algorithm.eps;
    let eta = cfg.algorithm.eta.unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (dist, cert) = margin_distribution(d, p, cfg.distribution.margin, cfg.distribution.atoms, &mut rng);
    let dist = Arc::new(dist);
    let h = OracleHandle::new(dist.clone(), backend(cfg), cfg.seed);
    let report = if p == 2.0 {
        margin_perceptron_sq(&h, d, &cert, eps, eta, None)?
    } else {
        pnorm_learn(&h, d, &cert, eps, None)?
    };
    let rate_at = |level: f64| dist.mean_of(|e: &Example| if e.y * dot(&report.weights, &e.x) <= level { 1.0 } else { 0.0 });
    let rate = rate_at(eta);
    let mut out = Outcome::new(rate, eps, is_exact(cfg));
    if p != 2.0 {
        // only the zero-margin rate is guaranteed away from the Euclidean case
        let half = cfg.distribution.margin / 2.0;
        out.notes.push(format!("violation rate {} at margin {half}", rate_at(half)));
    }
    if report.updates as f64 > report.update_bound {
        out.failures.push(format!("{} updates exceed the bound {}", report.updates, report.update_bound));
    }
    Ok((out, h.ledger()))
}

fn ldp(cfg: &ExperimentConfig) -> Result<(Outcome, QueryLedger), CliError> {
    let m = cfg.distribution.mean;
    let dist = FiniteDistribution::new(vec![0.0, 1.0], vec![1.0 - m, m])?;
    let h = OracleHandle::new(Arc::new(dist), Backend::ldp(cfg.oracle.privacy), cfg.seed);
    let tau = cfg.algorithm.eps;
    let v = h.ldp_query(&|w: &f64| *w, cfg.oracle.privacy, tau, cfg.algorithm.delta)?;
    Ok((Outcome::new((v - m).abs(), tau, false), h.ledger()))
}

/// Linear objective `<c, x>` over the unit Euclidean ball with `c` the mean
/// of a family distribution on the unit ball; the optimum is `-||c||_2`.
fn ball_linear(cfg: &ExperimentConfig) -> (OracleHandle<Vec<f64>>, Vec<f64>) {
    let d = cfg.distribution.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dist = family_distribution(family(cfg.distribution.family), d, 2.0, cfg.distribution.atoms, &mut rng);
    let c = dist.mean_vector(d, |w, out| out.copy_from_slice(w));
    (OracleHandle::new(Arc::new(dist), backend(cfg), cfg.seed), c)
}

fn cog(cfg: &ExperimentConfig) -> Result<(Outcome, QueryLedger), CliError> {
    let d = cfg.distribution.dim;
    let (h, c) = ball_linear(cfg);
    let body = Arc::new(BallBody { center: vec![0.0; d], radius: 1.0 });
    let conf = CogConfig { rounds: cfg.algorithm.iterations, seed: cfg.seed, ..Default::default() };
    let r = cog_optimize(&h, &Linear, 1.0, body, cfg.algorithm.eps, cfg.algorithm.delta, &conf)?;
    let gap = dot(&c, &r.x) + lp_norm(&c, 2.0);
    let mut out = Outcome::new(gap, r.gap_bound, false);
    if let Some(round) = r.rounds.iter().find(|round| !round.ratio_ok) {
        out.failures.push(format!("localizer radius ratio invariant failed at probe {:?}", round.probe));
    }
    Ok((out, h.ledger()))
}

fn anneal(cfg: &ExperimentConfig) -> Result<(Outcome, QueryLedger), CliError> {
    let d = cfg.distribution.dim;
    let (h, c) = ball_linear(cfg);
    let body = BallBody { center: vec![0.0; d], radius: 1.0 };
    let conf = AnnealConfig { steps: cfg.algorithm.iterations, seed: cfg.seed, ..Default::default() };
    let r = anneal_optimize(&h, &Linear, 1.0, &body, cfg.algorithm.eps, cfg.algorithm.delta, &conf)?;
    let gap = dot(&c, &r.x) + lp_norm(&c, 2.0);
    Ok((Outcome::new(gap, cfg.algorithm.eps, false), h.ledger()))
}

fn finish(cfg: &ExperimentConfig, out: Outcome, ledger: QueryLedger, started: Instant) -> RunReport {
    let mut failures = out.failures;
    // adversarial answers sit exactly on the band edge, so allow rounding
    if out.hard && !(out.achieved <= out.certified * (1.0 + 1e-9)) {
        failures.push(format!("achieved {} exceeds certified {}", out.achieved, out.certified));
    }
    RunReport {
        task: cfg.task.name().to_string(),
        dim: cfg.distribution.dim,
        q: cfg.algorithm.q,
        eps: cfg.algorithm.eps,
        tolerance: ledger.min_tolerance,
        vstat_n: ledger.max_vstat_n,
        queries: ledger.queries,
        achieved: out.achieved,
        certified: out.certified,
        seed: cfg.seed,
        ms: started.elapsed().as_secs_f64() * 1e3,
        hard: out.hard,
        failures,
        notes: out.notes,
        config: cfg.to_toml(),
    }
}

fn run_single(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let (out, ledger) = match cfg.task {
        Task::MeanEstimate => mean_estimate(cfg)?,
        Task::Optimize => optimize(cfg)?,
        Task::Perceptron => perceptron(cfg)?,
        Task::Ldp => ldp(cfg)?,
        Task::Cog => cog(cfg)?,
        Task::Anneal => anneal(cfg)?,
        Task::BenchSuite => unreachable!("suites are expanded before running"),
    };
    Ok(finish(cfg, out, ledger, started))
}

/// Expands a `bench_suite` config into one `mean_estimate` config per grid
/// point.
pub fn suite_members(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut runs = Vec::new();
    for &d in &cfg.suite.dims {
        for &q in &cfg.suite.qs {
            for &eps in &cfg.suite.eps {
                let mut c = cfg.clone();
                c.task = Task::MeanEstimate;
                c.out = None;
                c.distribution.dim = d;
                c.algorithm.q = q;
                c.algorithm.eps = eps;
                c.algorithm.variant = VariantName::Auto;
                runs.push(c);
            }
        }
    }
    runs
}

/// Validates, resolves defaults and runs the experiment. A suite yields one
/// report per grid point (run concurrently); other tasks yield one.
pub fn run_config(cfg: ExperimentConfig) -> Result<Vec<RunReport>, CliError> {
    cfg.validate()?;
    let cfg = cfg.resolve();
    if cfg.task != Task::BenchSuite {
        return Ok(vec![run_single(&cfg)?]);
    }
    suite_members(&cfg)
        .par_iter()
        .map(|member| {
            let mut r = run_single(member)?;
            let (d, q, eps) = (member.distribution.dim, member.algorithm.q, member.algorithm.eps);
            let contract = contract_queries(d, q, eps)?;
            if r.queries != contract {
                r.failures.push(format!("{} queries, contract {contract}", r.queries));
            }
            if r.queries as f64 > query_budget(d) {
                r.failures.push(format!("{} queries exceed 3 d log d = {}", r.queries, query_budget(d)));
            }
            Ok(r)
        })
        .collect()
}
