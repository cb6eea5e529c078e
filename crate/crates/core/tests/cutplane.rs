use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqopt::cutplane::{
    anneal_optimize, cog_optimize, estimate_centroid_inertia, hit_and_run_sample, AnnealConfig, BallBody, BoxBody,
    CogConfig, ConvexBody, Density, MemoValue, SamplerConfig,
};
use sqopt::firstorder::{FnObjective, Linear};
use sqopt::geometry::{dot, lp_norm};
use sqopt::oracle::{Backend, FiniteDistribution, NoisePolicy, OracleHandle, SignHint};
use sqopt::synthetic::random_polytope;

fn mean_and_var(pts: &[Vec<f64>], i: usize) -> (f64, f64) {
    let n = pts.len() as f64;
    let m = pts.iter().map(|p| p[i]).sum::<f64>() / n;
    let v = pts.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

#[test]
fn uniform_square_sample_mean_is_near_origin() {
    let n = 20_000;
    let pts = hit_and_run_sample(&BoxBody::cube(2, 1.0), &Density::Uniform, n, &SamplerConfig::for_dim(2), 1).unwrap();
    for i in 0..2 {
        let (m, v) = mean_and_var(&pts, i);
        assert!(m.abs() <= 4.0 / (n as f64).sqrt(), "mean {m}");
        assert!((v - 1.0 / 3.0).abs() < 0.02, "variance {v}");
    }
}

#[test]
fn unit_interval_variance_is_one_twelfth() {
    let body = BoxBody { lo: vec![0.0], hi: vec![1.0] };
    let pts = hit_and_run_sample(&body, &Density::Uniform, 40_000, &SamplerConfig::for_dim(1), 2).unwrap();
    let (m, v) = mean_and_var(&pts, 0);
    assert!((m - 0.5).abs() < 0.01);
    assert!((v - 1.0 / 12.0).abs() < 0.003, "variance {v}");
}

#[test]
fn zero_temperature_gibbs_matches_uniform() {
    let zero = |_: &[f64]| 0.0;
    let g = Density::Gibbs { alpha: 0.0, value: &zero, grid: 16 };
    let body = BoxBody::cube(1, 1.0);
    let cfg = SamplerConfig { burn_in: 10, thin: 1, chains: 1 };
    let a = hit_and_run_sample(&body, &g, 20_000, &cfg, 5).unwrap();
    let (m, v) = mean_and_var(&a, 0);
    assert!(m.abs() < 0.03 && (v - 1.0 / 3.0).abs() < 0.02);
}

#[test]
fn steep_gibbs_concentrates_at_minimiser() {
    let val = |x: &[f64]| x[0];
    let g = Density::Gibbs { alpha: 500.0, value: &val, grid: 32 };
    let body = BoxBody::cube(1, 1.0);
    let pts = hit_and_run_sample(&body, &g, 2000, &SamplerConfig { burn_in: 5, thin: 1, chains: 1 }, 3).unwrap();
    let (m, _) = mean_and_var(&pts, 0);
    assert!((m + 1.0).abs() < 0.01, "mean {m}");
}

#[test]
fn ball_centroid_and_covariance() {
    let d = 3;
    let ball = BallBody { center: vec![0.0; d], radius: 1.0 };
    let est = estimate_centroid_inertia(&ball, None, &SamplerConfig::for_dim(d), 7).unwrap();
    assert!(lp_norm(&est.centroid, 2.0) < 0.05);
    let target = 1.0 / (d as f64 + 2.0);
    for v in est.covariance.clone().symmetric_eigen().eigenvalues.iter() {
        assert!((v / target - 1.0).abs() < 0.2, "eigenvalue {v} vs {target}");
    }
}

#[test]
fn box_principal_axes_align_with_coordinates() {
    let body = BoxBody { lo: vec![-2.0, -0.5], hi: vec![2.0, 0.5] };
    let est = estimate_centroid_inertia(&body, Some(50_000), &SamplerConfig::for_dim(2), 9).unwrap();
    let eig = est.covariance.clone().symmetric_eigen();
    let k = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
    let axis = eig.eigenvectors.column(k);
    let angle = axis[1].abs().atan2(axis[0].abs()).to_degrees();
    assert!(angle < 5.0, "major axis off by {angle} degrees");
}

#[test]
fn translated_body_shifts_centroid() {
    let cfg = SamplerConfig::for_dim(2);
    let a = estimate_centroid_inertia(&BoxBody::cube(2, 1.0), Some(5000), &cfg, 11).unwrap();
    let b = estimate_centroid_inertia(&BoxBody { lo: vec![2.0, -4.0], hi: vec![4.0, -2.0] }, Some(5000), &cfg, 11).unwrap();
    for i in 0..2 {
        let shift = [3.0, -3.0][i];
        assert!((b.centroid[i] - a.centroid[i] - shift).abs() < 1e-9);
    }
}

#[test]
fn halfspaces_through_estimated_centroid_keep_a_third() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..6 {
        let d = 2 + k % 2;
        let poly = random_polytope(d, &mut rng);
        let est = estimate_centroid_inertia(&poly, None, &SamplerConfig::for_dim(d), k as u64).unwrap();
        let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
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
        assert!(frac.min(1.0 - frac) >= 0.30, "retained {frac}");
    }
}

fn adversarial(dist: FiniteDistribution<Vec<f64>>, seed: u64) -> OracleHandle<Vec<f64>> {
    OracleHandle::new(Arc::new(dist), Backend::exact(NoisePolicy::Adversarial(SignHint::Random)), seed)
}

#[test]
fn cog_linear_over_square_reaches_vertex() {
    let c = vec![0.6, -0.3];
    let h = adversarial(FiniteDistribution::point_mass(c.clone()), 0);
    let eps = 0.1;
    // |<c, x>| <= ||c||_1 on the unit square
    let b = 0.9;
    let r = cog_optimize(&h, &Linear, b, Arc::new(BoxBody::cube(2, 1.0)), eps, 0.1, &CogConfig::default()).unwrap();
    let gap = dot(&c, &r.x) + lp_norm(&c, 1.0);
    assert!(gap <= eps, "gap {gap}");
    assert!(r.gap_bound <= eps + 1e-12);
    assert!(r.rounds.iter().all(|x| x.gradient_queries == 4 && x.value_queries == 1 && x.ratio_ok));
    assert_eq!(h.ledger().queries, 5 * r.rounds.len());
}

#[test]
fn cog_constant_objective_stops_with_zero_gradient() {
    let h = OracleHandle::new(
        Arc::new(FiniteDistribution::point_mass(vec![0.0, 0.0, 0.0])),
        Backend::exact(NoisePolicy::Zero),
        0,
    );
    let obj = FnObjective::new(|_: &[f64], _: &Vec<f64>| 0.5, |_: &[f64], _: &Vec<f64>, o: &mut [f64]| o.fill(0.0));
    let r = cog_optimize(&h, &obj, 1.0, Arc::new(BallBody { center: vec![0.0; 3], radius: 1.0 }), 0.1, 0.1, &CogConfig::default())
        .unwrap();
    assert!(r.converged);
    assert_eq!(r.rounds.len(), 1);
    assert!(r.gap_bound <= 0.1);
}

#[test]
fn cog_steep_objective_in_three_dimensions() {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let atoms: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = lp_norm(&v, 2.0);
            v.iter().map(|x| 2.0 * x / n).collect()
        })
        .collect();
    let dist = FiniteDistribution::uniform(atoms).unwrap();
    let c = dist.mean_vector(d, |w, o| o.copy_from_slice(w));
    let h = adversarial(dist, 4);
    // <w, x> - sqrt(1 - |x|^2): convex, range within [-3, 2], gradient
    // unbounded at the sphere; minimum -sqrt(1 + |c|^2)
    let obj = FnObjective::new(
        |x: &[f64], w: &Vec<f64>| dot(x, w) - (1.0 - dot(x, x)).max(0.0).sqrt(),
        |x: &[f64], w: &Vec<f64>, o: &mut [f64]| {
            let s = (1.0 - dot(x, x)).max(1e-300).sqrt();
            for i in 0..x.len() {
                o[i] = w[i] + x[i] / s;
            }
        },
    );
    let eps = 0.1;
    let cfg = CogConfig { seed: 4, ..Default::default() };
    let r = cog_optimize(&h, &obj, 3.0, Arc::new(BallBody { center: vec![0.0; d], radius: 1.0 }), eps, 0.1, &cfg).unwrap();
    let fx = dot(&c, &r.x) - (1.0 - dot(&r.x, &r.x)).sqrt();
    let gap = fx + (1.0 + dot(&c, &c)).sqrt();
    assert!(gap <= eps, "gap {gap}");
    assert!(r.rounds.iter().all(|x| x.gradient_queries == 2 * d && x.ratio_ok));
}

#[test]
fn annealing_finds_near_optimal_linear_minimiser() {
    let d = 5;
    let c = vec![0.3, -0.1, 0.2, 0.0, 0.4];
    let h = adversarial(FiniteDistribution::point_mass(c.clone()), 1);
    let body = BallBody { center: vec![0.0; d], radius: 1.0 };
    let r = anneal_optimize(&h, &Linear, 1.0, &body, 0.2, 1.0 / 3.0, &AnnealConfig::default()).unwrap();
    assert!(dot(&c, &r.x) + lp_norm(&c, 2.0) <= 0.2);
    assert!((r.tolerance - 0.2 / 5.0).abs() < 1e-15);
    assert_eq!(h.ledger().queries, r.queries);
}

#[test]
fn memoised_values_are_consistent_and_nearly_convex() {
    let d = 5;
    let eps = 0.2;
    let c = vec![0.5, 0.1, -0.3, 0.2, 0.0];
    let h = adversarial(FiniteDistribution::point_mass(c.clone()), 2);
    let memo = MemoValue::new(&h, &Linear, 1.0, eps / d as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let t: f64 = rng.gen();
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let violation = memo.value(&z) - t * memo.value(&x) - (1.0 - t) * memo.value(&y);
        assert!(violation <= 2.0 * eps / d as f64 + 1e-12);
        assert_eq!(memo.value(&x), memo.value(&x));
    }
}
