//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sqopt::apps::{margin_perceptron_sq, perceptron_update_bound, perceptron_vstat_bound, Example, GlmSpec, Loss};
use sqopt::cutplane::{
    anneal_optimize, cog_optimize, estimate_centroid_inertia, AnnealConfig, BallBody, CogConfig, ConvexBody,
    SamplerConfig,
};
use sqopt::firstorder::{
    accelerated_descent, mirror_descent, strongly_convex_solve, Constants, FnObjective, Linear, SquaredDistance,
    StochasticProblem,
};
use sqopt::geometry::{conjugate, dot, lp_norm, next_pow2, random_orthogonal, sub, ProxSetup};
use sqopt::meanest::{
    estimate_l1, estimate_l2, estimate_linf, estimate_lq_high, estimate_lq_low, truncation_residual_sq, KashinFrame,
    L2Variant, LowQVariant, RingDecomposition,
};
use sqopt::oracle::{
    vstat_band, Backend, FiniteDistribution, LaplaceRandomizer, NoisePolicy, OracleHandle, QueryKind, SignHint,
};
use sqopt::synthetic::{family_distribution, margin_distribution, random_polytope, Family};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn adversarial<W: Send + Sync + 'static>(dist: FiniteDistribution<W>, seed: u64) -> OracleHandle<W>
where
    FiniteDistribution<W>: sqopt::oracle::DistributionSource<W>,
{
    OracleHandle::new(Arc::new(dist), Backend::exact(NoisePolicy::Adversarial(SignHint::Random)), seed)
}

#[derive(Clone, Copy)]
enum Estimator {
    Linf,
    L1,
    L2Kashin,
    LowViaL2(f64),
    LowRings(f64),
    High(f64),
}

impl Estimator {
    fn norm(self) -> f64 {
        match self {
            Estimator::Linf => f64::INFINITY,
            Estimator::L1 => 1.0,
            Estimator::L2Kashin => 2.0,
            Estimator::LowViaL2(q) | Estimator::LowRings(q) | Estimator::High(q) => q,
        }
    }

    /// Query count stated for each estimator.
    fn contract(self, d: usize) -> usize {
        match self {
            Estimator::Linf => d,
            Estimator::L1 => next_pow2(d),
            Estimator::L2Kashin | Estimator::LowViaL2(_) => 2 * d,
            Estimator::LowRings(q) => {
                let top = RingDecomposition::new(d, q).top.max(-1);
                (2 * (top + 1) as usize + 1) * d
            }
            Estimator::High(q) => RingDecomposition::new(d, q).ring_count() * 3 * d + d,
        }
    }
}

fn criterion_estimators() -> Outcome {
    let started = Instant::now();
    let estimators = [
        Estimator::Linf,
        Estimator::L1,
        Estimator::L2Kashin,
        Estimator::LowViaL2(1.5),
        Estimator::LowRings(1.5),
        Estimator::High(3.0),
        Estimator::High(4.0),
    ];
    let mut cases = Vec::new();
    for d in [64, 256] {
        for eps in [0.05, 0.2] {
            for (k, est) in estimators.iter().enumerate() {
                for trial in 0..100u64 {
                    cases.push((d, eps, k, *est, trial));
                }
            }
        }
    }
    let worst = cases
        .par_iter()
        .map(|&(d, eps, k, est, trial)| -> Result<f64, String> {
            let q = est.norm();
            let seed = trial + 1000 * k as u64 + 100_000 * d as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let family = Family::ALL[trial as usize % Family::ALL.len()];
            let dist = family_distribution(family, d, q, 10, &mut rng);
            let truth = dist.mean_vector(d, |w, out| out.copy_from_slice(w));
            let h = adversarial(dist, seed);
            let map = |w: &Vec<f64>, out: &mut [f64]| out.copy_from_slice(w);
            let r = match est {
                Estimator::Linf => estimate_linf(&h, d, &map, eps),
                Estimator::L1 => estimate_l1(&h, d, &map, eps),
                Estimator::L2Kashin => estimate_l2(&h, d, &map, eps, L2Variant::Kashin),
                Estimator::LowViaL2(q) => estimate_lq_low(&h, d, q, &map, eps, LowQVariant::ViaL2),
                Estimator::LowRings(q) => estimate_lq_low(&h, d, q, &map, eps, LowQVariant::VstatRings),
                Estimator::High(q) => estimate_lq_high(&h, d, q, &map, eps),
            }
            .map_err(|e| format!("d={d} q={q} eps={eps}: {e}"))?;
            let err = lp_norm(&sub(&r.mean, &truth), q);
            ensure(err <= eps * (1.0 + 1e-9), || format!("d={d} q={q} eps={eps} trial {trial}: error {err}"))?;
            let used = h.ledger().queries;
            ensure(used == est.contract(d), || format!("d={d} q={q}: {used} queries, contract {}", est.contract(d)))?;
            Ok(err / eps)
        })
        .collect::<Result<Vec<f64>, String>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} runs, worst error/eps {worst:.4}, {secs:.1}s", cases.len()))
}

fn criterion_kashin() -> Outcome {
    let mut worst_level: f64 = 0.0;
    let mut worst_recon: f64 = 0.0;
    let mut worst_parseval: f64 = 0.0;
    let mut max_k: f64 = 0.0;
    for d in [64, 128, 256, 512] {
        let frame = KashinFrame::shared(d).map_err(|e| e.to_string())?;
        ensure(frame.size() == 2 * d, || format!("redundancy is not 2 at d={d}"))?;
        let m = frame.matrix();
        let defect = (m * m.transpose() - DMatrix::<f64>::identity(d, d)).amax();
        worst_parseval = worst_parseval.max(defect);
        let k = frame.level();
        max_k = max_k.max(k);
        ensure(k <= 4.0, || format!("calibrated level {k} at d={d}"))?;
        let root_n = (frame.size() as f64).sqrt();
        let stats = (0..1000u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(i + 7919 * d as u64);
                let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                if i % 4 == 0 {
                    // spiky vectors stress the flattening
                    w.iter_mut().enumerate().for_each(|(j, v)| *v *= if j % 17 == 0 { 50.0 } else { 1.0 });
                }
                let mut a = vec![0.0; frame.size()];
                let level = frame.represent_into(&w, &mut a);
                let measured = root_n * lp_norm(&a, f64::INFINITY) / lp_norm(&w, 2.0);
                let recon = lp_norm(&sub(&frame.synthesize(&a), &w), 2.0) / lp_norm(&w, 2.0);
                (level.max(measured), recon)
            })
            .collect::<Vec<_>>();
        for (level, recon) in stats {
            worst_level = worst_level.max(level / k);
            worst_recon = worst_recon.max(recon);
        }
    }
    ensure(worst_parseval <= 1e-9, || format!("Parseval defect {worst_parseval:e}"))?;
    ensure(worst_level <= 1.0, || format!("representation level {worst_level} times K"))?;
    ensure(worst_recon <= 1e-8, || format!("relative reconstruction error {worst_recon:e}"))?;
    Ok(format!(
        "Parseval defect {worst_parseval:.1e}, K <= {max_k:.3}, level/K <= {worst_level:.3}, reconstruction {worst_recon:.1e}"
    ))
}

fn criterion_rotation() -> Outcome {
    let d = 64;
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let w: Vec<f64> = {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = lp_norm(&v, 2.0);
        v.iter().map(|x| x / n).collect()
    };
    let levels = [0.3, 0.5];
    let samples: Vec<[f64; 2]> = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(1_000_000 + i);
            let u = random_orthogonal(d, &mut r);
            [truncation_residual_sq(&u, &w, levels[0]), truncation_residual_sq(&u, &w, levels[1])]
        })
        .collect();
    let mut lines = Vec::new();
    for (k, a) in levels.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
        let se = (var / draws as f64).sqrt();
        let bound = 4.0 * (-(d as f64) * a * a / 2.0).exp();
        ensure(mean <= bound + 3.0 * se, || format!("a={a}: mean {mean:e} > {bound:e} + 3 * {se:e}"))?;
        lines.push(format!("a={a}: {mean:.2e} <= {bound:.2e}"));
    }
    Ok(lines.join(", "))
}

/// Linear objective `<c, x>` over the unit `l_p` ball with data on the unit
/// dual ball; the optimum is `-||c||_q`.
fn linear_instance(d: usize, p: f64, family: Family, seed: u64) -> (OracleHandle<Vec<f64>>, StochasticProblem<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = family_distribution(family, d, conjugate(p), 12, &mut rng);
    let c = dist.mean_vector(d, |w, out| out.copy_from_slice(w));
    let prob = StochasticProblem::new(
        ProxSetup::new(d, p, 1.0).unwrap(),
        Arc::new(Linear),
        Constants { lipschitz: Some(1.0), value_bound: Some(1.0), ..Default::default() },
    );
    (adversarial(dist, seed), prob, c)
}

fn criterion_mirror_descent() -> Outcome {
    let eta = 0.02;
    let mut cases = Vec::new();
    for p in [1.0, 1.5, 2.0] {
        for t in [10, 100, 1000] {
            for seed in 0..4u64 {
                cases.push((p, t, seed));
            }
        }
    }
    let worst = cases
        .par_iter()
        .map(|&(p, t, seed)| -> Result<f64, String> {
            let family = if p == 1.0 { Family::Sparse } else { Family::Dense };
            let (h, prob, c) = linear_instance(16, p, family, seed);
            let r = mirror_descent(&h, &prob, t, eta, false).map_err(|e| e.to_string())?;
            let setup = &prob.setup;
            let rr = setup.uniform_convexity();
            let stated = (rr * setup.diameter() / t as f64).powf(1.0 / rr) + eta;
            ensure((r.gap_bound - stated).abs() <= 1e-12, || format!("bound {} vs {stated}", r.gap_bound))?;
            let gap = dot(&c, &r.x) + lp_norm(&c, conjugate(p));
            ensure(gap <= stated, || format!("p={p} T={t} seed {seed}: gap {gap} > {stated}"))?;
            Ok(gap / stated)
        })
        .collect::<Result<Vec<f64>, String>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(format!("{} runs, worst gap/bound {worst:.3}", cases.len()))
}

fn criterion_accelerated() -> Outcome {
    let eps = 0.05;
    let eta = eps / 6.0;
    let mut worst: f64 = 0.0;
    for p in [1.5, 2.0] {
        for t in [10, 100] {
            for seed in 0..4u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = family_distribution(Family::Dense, 16, p, 12, &mut rng);
                let c = dist.mean_vector(16, |w, out| out.copy_from_slice(w));
                let h = adversarial(dist, seed);
                let prob = StochasticProblem::new(
                    ProxSetup::new(16, p, 1.0).unwrap(),
                    Arc::new(SquaredDistance),
                    Constants { lipschitz: Some(2.0), smoothness: Some(1.0), value_bound: Some(2.0), ..Default::default() },
                );
                let r = accelerated_descent(&h, &prob, t, eta).map_err(|e| e.to_string())?;
                // F(x) - F* = ||x - c||^2 / 2 with c inside the ball
                let gap = 0.5 * lp_norm(&sub(&r.x, &c), 2.0).powi(2);
                let stated = prob.setup.diameter() / (t * t) as f64 + 3.0 * eta;
                ensure(gap <= stated, || format!("p={p} T={t} seed {seed}: gap {gap} > {stated}"))?;
                worst = worst.max(gap / stated);
            }
        }
    }
    Ok(format!("16 runs, worst gap/(L1 D/T^2 + 3 eta) {worst:.3}"))
}

fn criterion_strongly_convex() -> Outcome {
    let eta = 0.01;
    let mut worst: f64 = 0.0;
    for t in [10, 50, 200] {
        for seed in 0..3u64 {
            // regularized quadratic (1/2)||x||^2 + <c, x> over B_2: optimum -c
            let d = 16;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = family_distribution(Family::Sparse, d, 2.0, 10, &mut rng);
            let c = dist.mean_vector(d, |w, out| out.copy_from_slice(w));
            let h = adversarial(dist, seed);
            let obj = FnObjective::new(
                |x: &[f64], w: &Vec<f64>| 0.5 * dot(x, x) + dot(w, x),
                |x: &[f64], w: &Vec<f64>, out: &mut [f64]| {
                    for i in 0..x.len() {
                        out[i] = x[i] + w[i];
                    }
                },
            );
            let prob = StochasticProblem::new(
                ProxSetup::new(d, 2.0, 1.0).unwrap(),
                Arc::new(obj),
                Constants { lipschitz: Some(2.0), smoothness: Some(1.0), strong_convexity: Some(1.0), value_bound: Some(1.5) },
            );
            let r = strongly_convex_solve(&h, &prob, t, eta).map_err(|e| e.to_string())?;
            let (mu, m) = (0.5, 2.0);
            let stated = 0.5 * m * (-(mu / m) * (t as f64 + 1.0)).exp() + eta;
            ensure((r.gap_bound - stated).abs() <= 1e-12, || format!("bound {} vs {stated}", r.gap_bound))?;
            let f = |x: &[f64]| 0.5 * dot(x, x) + dot(&c, x);
            let gap = f(&r.x) - f(&c.iter().map(|v| -v).collect::<Vec<_>>());
            ensure(gap <= stated, || format!("quadratic T={t} seed {seed}: gap {gap} > {stated}"))?;
            worst = worst.max(gap / stated);

            // ridge regression over B_2 with a closed-form interior optimum
            let d = 6;
            let (data, _) = margin_distribution(d, 2.0, 0.1, 40, &mut rng);
            let spec = GlmSpec { loss: Loss::Squared, lambda: 0.5, p: 2.0, input_bound: 1.0, predictor_radius: 1.0, target_bound: 1.0 };
            let second = data.mean_vector(d * d, |e: &Example, out| {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = e.x[i] * e.x[j];
                    }
                }
            });
            let cross = data.mean_vector(d, |e: &Example, out| out.iter_mut().zip(&e.x).for_each(|(o, x)| *o = e.y * x));
            let system = DMatrix::from_row_slice(d, d, &second) + DMatrix::identity(d, d) * (2.0 * spec.lambda);
            let ridge = system.lu().solve(&DVector::from_column_slice(&cross)).ok_or("singular ridge system")?;
            let ridge: Vec<f64> = ridge.iter().copied().collect();
            ensure(lp_norm(&ridge, 2.0) < 1.0, || "ridge optimum outside the ball".into())?;
            let value = |x: &[f64]| {
                data.mean_of(|e: &Example| spec.loss.value(dot(&e.x, x), e.y)) + spec.lambda * dot(x, x)
            };
            let prob = spec.problem(d).map_err(|e| e.to_string())?;
            let h = adversarial(data.clone(), seed);
            let r = strongly_convex_solve(&h, &prob, t, eta).map_err(|e| e.to_string())?;
            let kappa = 2.0 * spec.lambda;
            let m = 2.0 * prob.smoothness().unwrap();
            let stated = 0.5 * m * (-(kappa / 2.0 / m) * (t as f64 + 1.0)).exp() + eta;
            ensure((r.gap_bound - stated).abs() <= 1e-12, || format!("ridge bound {} vs {stated}", r.gap_bound))?;
            let gap = value(&r.x) - value(&ridge);
            ensure(gap <= stated, || format!("ridge T={t} seed {seed}: gap {gap} > {stated}"))?;
            worst = worst.max(gap / stated);
        }
    }
    Ok(format!("18 runs, worst gap/bound {worst:.3}"))
}

fn criterion_cog() -> Outcome {
    let started = Instant::now();
    let gamma: f64 = 2.0 / 3.0;
    let eps: f64 = 0.1;
    let b = 3.0;
    let mut lines = Vec::new();
    for d in [2usize, 3, 5] {
        let rounds = (d as f64 * (1.0 / gamma).log2() * (4.0 * b / eps).log2()).ceil() as usize;
        let mut successes = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 * d as u64 + seed);
            let atoms: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let n = lp_norm(&v, 2.0);
                    v.iter().map(|x| 2.0 * x / n).collect()
                })
                .collect();
            let dist = FiniteDistribution::uniform(atoms).unwrap();
            let c = dist.mean_vector(d, |w, o| o.copy_from_slice(w));
            let h = adversarial(dist, seed);
            // <w, x> - sqrt(1 - ||x||^2) on the unit ball: range [-3, 2],
            // unbounded gradient at the sphere, minimum -sqrt(1 + ||c||^2)
            let obj = FnObjective::new(
                |x: &[f64], w: &Vec<f64>| dot(x, w) - (1.0 - dot(x, x)).max(0.0).sqrt(),
                |x: &[f64], w: &Vec<f64>, o: &mut [f64]| {
                    let s = (1.0 - dot(x, x)).max(1e-300).sqrt();
                    for i in 0..x.len() {
                        o[i] = w[i] + x[i] / s;
                    }
                },
            );
            let cfg = CogConfig { rounds: Some(rounds), seed, ..Default::default() };
            let body = Arc::new(BallBody { center: vec![0.0; d], radius: 1.0 });
            let r = cog_optimize(&h, &obj, b, body, eps, 0.1, &cfg).map_err(|e| e.to_string())?;
            for round in &r.rounds {
                ensure(round.gradient_queries == 2 * d && round.value_queries == 1, || {
                    format!("d={d}: round used {} + {} queries", round.gradient_queries, round.value_queries)
                })?;
                ensure(round.ratio_ok, || format!("d={d} seed {seed}: radius ratio invariant failed"))?;
            }
            ensure(h.ledger().queries == (2 * d + 1) * r.rounds.len(), || format!("d={d}: ledger mismatch"))?;
            let fx = dot(&c, &r.x) - (1.0 - dot(&r.x, &r.x)).max(0.0).sqrt();
            let gap = fx + (1.0 + dot(&c, &c)).sqrt();
            if gap <= eps {
                successes += 1;
            }
        }
        ensure(successes >= 9, || format!("d={d}: {successes}/10 seeds within eps"))?;
        lines.push(format!("d={d} T={rounds} {successes}/10"));
    }
    let mut retained_min: f64 = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..50u64 {
        let d = 2 + (k % 2) as usize;
        let poly = random_polytope(d, &mut rng);
        let est = estimate_centroid_inertia(&poly, None, &SamplerConfig::for_dim(d), k).map_err(|e| e.to_string())?;
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let (mut inside, mut kept) = (0usize, 0usize);
        for _ in 0..100_000 {
            let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if poly.contains(&p) {
                inside += 1;
                if dot(&dir, &p) <= dot(&dir, &est.centroid) {
                    kept += 1;
                }
            }
        }
        let frac = kept as f64 / inside as f64;
        retained_min = retained_min.min(frac.min(1.0 - frac));
    }
    ensure(retained_min >= 0.30, || format!("a halfspace kept only {retained_min:.3}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 600.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{}, min retention {retained_min:.3}, {secs:.1}s", lines.join(", ")))
}

fn criterion_anneal() -> Outcome {
    let d = 5;
    let eps = 0.2;
    let mut successes = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let dist = family_distribution(Family::Dense, d, 2.0, 6, &mut rng);
        let c = dist.mean_vector(d, |w, o| o.copy_from_slice(w));
        let h = adversarial(dist, seed);
        let body = BallBody { center: vec![0.0; d], radius: 1.0 };
        let cfg = AnnealConfig { seed, ..Default::default() };
        let r = anneal_optimize(&h, &Linear, 1.0, &body, eps, 0.1, &cfg).map_err(|e| e.to_string())?;
        ensure((r.tolerance - eps / d as f64).abs() <= 1e-12, || format!("value tolerance {}", r.tolerance))?;
        if dot(&c, &r.x) + lp_norm(&c, 2.0) <= eps {
            successes += 1;
        }
    }
    ensure(3 * successes >= 2 * 20, || format!("{successes}/20 runs eps-optimal"))?;
    Ok(format!("{successes}/20 runs eps-optimal"))
}

fn criterion_perceptron() -> Outcome {
    let (d, gamma, eps) = (128, 0.1, 0.05);
    let eta = gamma / 2.0;
    let mut lines = Vec::new();
    for seed in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (dist, cert) = margin_distribution(d, 2.0, gamma, 400, &mut rng);
        ensure(cert.holds_on((0..10_000).map(|_| &dist.atoms()[dist.draw_index(&mut rng)])), || {
            "margin certificate fails on probes".into()
        })?;
        let dist = Arc::new(dist);
        let h = OracleHandle::new(dist.clone(), Backend::exact(NoisePolicy::Adversarial(SignHint::Random)), seed);
        let r = margin_perceptron_sq(&h, d, &cert, eps, eta, None).map_err(|e| e.to_string())?;
        let ceiling = 36.0 * (cert.radius * cert.weight_bound / gamma).powi(2);
        ensure((perceptron_update_bound(1.0, 1.0, gamma, eta) - ceiling).abs() <= 1e-6, || "update bound".into())?;
        ensure(r.updates as f64 <= ceiling, || format!("{} updates > {ceiling}", r.updates))?;
        let draws = 100_000;
        let violations = (0..draws)
            .filter(|_| {
                let e = &dist.atoms()[dist.draw_index(&mut rng)];
                e.y * dot(&r.weights, &e.x) < eta
            })
            .count();
        let rate = violations as f64 / draws as f64;
        ensure(rate <= eps, || format!("seed {seed}: violation rate {rate}"))?;
        let level = KashinFrame::shared(d).map_err(|e| e.to_string())?.level();
        let formula = perceptron_vstat_bound(level, cert.radius, cert.weight_bound, gamma, eps);
        // the formula with the conditional query's two roundings: a ceiling
        // on the unconditioned parameter, then on its division by eps / 2
        let unconditioned = (4.0 * level * cert.radius * 3.0 * cert.weight_bound / gamma).powi(2).ceil();
        let allowed = (unconditioned / (eps / 2.0)).ceil();
        ensure(allowed <= formula + 2.0 / eps + 1.0, || "rounded formula drifts from the closed form".into())?;
        let ledger = h.ledger();
        for entry in ledger.entries.iter().filter(|e| e.kind == QueryKind::Vstat) {
            ensure(entry.parameter <= allowed, || format!("VSTAT({}) exceeds {allowed}", entry.parameter))?;
        }
        lines.push(format!("updates {} <= {ceiling}, violation {rate:.4}, max VSTAT {:.3e}", r.updates, ledger.max_vstat_n));
    }
    Ok(lines.join("; "))
}

fn criterion_ldp() -> Outcome {
    for privacy in [0.5, 1.0, 2.0] {
        let rand = LaplaceRandomizer { privacy };
        let mut worst: f64 = 0.0;
        for i in 0..=20 {
            for j in 0..=20 {
                let (x1, x2) = (i as f64 / 20.0, j as f64 / 20.0);
                for k in -2000..=2000 {
                    let z = k as f64 / 200.0;
                    worst = worst.max(rand.density(x1, z) / rand.density(x2, z));
                }
            }
        }
        ensure(worst <= privacy.exp() * (1.0 + 1e-12), || format!("privacy {privacy}: density ratio {worst}"))?;
    }
    let (privacy, tau, delta, p) = (1.0, 0.05, 0.1, 0.3);
    let n = (8.0 * (2.0f64 / delta).ln() / (privacy * tau as f64).powi(2)).ceil() as u64;
    let hits = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let dist = FiniteDistribution::new(vec![0.0, 1.0], vec![1.0 - p, p]).unwrap();
            let h = OracleHandle::new(Arc::new(dist), Backend::ldp(privacy), i);
            let v = h.ldp_query(&|w: &f64| *w, privacy, tau, delta).unwrap();
            assert_eq!(h.ledger().samples_drawn, n);
            ((v - p).abs() <= tau) as usize
        })
        .sum::<usize>();
    ensure(hits >= 180, || format!("{hits}/200 runs within tau"))?;
    Ok(format!("density ratio <= e^alpha, {hits}/200 runs within tau at n = {n}"))
}

fn criterion_oracle() -> Outcome {
    let two_mass = |p: f64| FiniteDistribution::new(vec![0.0, 1.0], vec![1.0 - p, p]).unwrap();
    let ask = |p: f64, hint: SignHint, n: f64| {
        let h = OracleHandle::new(Arc::new(two_mass(p)), Backend::exact(NoisePolicy::Adversarial(hint)), 0);
        h.query_vstat(&|w: &f64| *w, n).unwrap()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    ensure(close(vstat_band(0.5, 100.0), 0.05), || "band at p = 1/2".into())?;
    ensure(close(ask(0.5, SignHint::Plus, 100.0), 0.55) && close(ask(0.5, SignHint::Minus, 100.0), 0.45), || {
        "adversarial answers at p = 1/2".into()
    })?;
    ensure(close(ask(0.0, SignHint::Plus, 40.0), 1.0 / 40.0) && close(ask(0.0, SignHint::Minus, 40.0), 0.0), || {
        "answers at p = 0".into()
    })?;
    ensure(close(ask(1.0, SignHint::Minus, 10.0), 0.9) && close(ask(1.0, SignHint::Plus, 10.0), 1.0), || {
        "answers at p = 1".into()
    })?;
    for (p, n) in [(0.01, 50.0), (0.2, 1000.0), (0.7, 3.0)] {
        let expected = (1.0f64 / n).max((p * (1.0 - p) / n).sqrt());
        ensure(close(vstat_band(p, n), expected), || format!("band formula at p={p}, n={n}"))?;
        ensure(close((ask(p, SignHint::Minus, n) - p).abs(), expected.min(p)), || format!("answer at p={p}"))?;
    }
    // conditional query on a three-point distribution: Pr[A] = 0.2,
    // E[phi 1_A] = 0.15
    let dist = FiniteDistribution::new(vec![0.0, 1.0, 2.0], vec![0.8, 0.05, 0.15]).unwrap();
    let (alpha, n) = (0.2, 400.0);
    for hint in [SignHint::Plus, SignHint::Minus] {
        let h = OracleHandle::new(Arc::new(dist.clone()), Backend::exact(NoisePolicy::Adversarial(hint)), 0);
        let v = h
            .conditional_vstat(&|w: &f64| (*w == 2.0) as u8 as f64, &|w: &f64| (*w >= 1.0) as u8 as f64, alpha, n)
            .unwrap();
        let err = (v - 0.15).abs();
        ensure(err <= 0.2 / 20.0 + 1e-15, || format!("conditional error {err}"))?;
        ensure(close(err, vstat_band(0.15, (n / alpha).ceil())), || "conditional band".into())?;
        ensure(h.ledger().max_vstat_n == (n / alpha).ceil(), || "conditional parameter".into())?;
    }
    Ok("band formula and conditional bound exact on two- and three-point distributions".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("l_inf/l_1/l_2/l_q estimators at contract tolerance", criterion_estimators),
        ("Kashin frame tightness, level and reconstruction", criterion_kashin),
        ("random rotation truncation residual", criterion_rotation),
        ("mirror descent rate", criterion_mirror_descent),
        ("accelerated method rate", criterion_accelerated),
        ("strongly convex solver rate", criterion_strongly_convex),
        ("center of gravity", criterion_cog),
        ("annealing optimizer", criterion_anneal),
        ("margin perceptron with statistical queries", criterion_perceptron),
        ("local differential privacy backend", criterion_ldp),
        ("oracle definitions", criterion_oracle),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
