//! Synthetic distribution families used by the test suites and the
//! experiment runner.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::apps::{Example, MarginCertificate};
use crate::cutplane::{PolytopeBody, Sandwich};
use crate::geometry::lp_norm;
use crate::oracle::FiniteDistribution;

/// Shapes of finitely supported distributions on the unit `l_q` ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// A single point on the unit sphere.
    PointMass,
    /// Atoms with Gaussian entries, scaled to random norms in `[0.5, 1]`.
    Dense,
    /// Atoms with a handful of nonzero coordinates.
    Sparse,
    /// Atoms whose coordinates spread over several dyadic magnitude levels.
    MultiScale,
    /// Signed standard basis vectors.
    Vertices,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::PointMass, Family::Dense, Family::Sparse, Family::MultiScale, Family::Vertices];
}

fn normalise(mut x: Vec<f64>, q: f64, target: f64) -> Vec<f64> {
    let n = lp_norm(&x, q);
    if n > 0.0 {
        let f = target / n;
        x.iter_mut().for_each(|v| *v *= f);
    }
    x
}

fn gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// One atom of the given family in the unit `l_q` ball.
pub fn atom<R: Rng + ?Sized>(family: Family, dim: usize, q: f64, rng: &mut R) -> Vec<f64> {
    match family {
        Family::PointMass => normalise(gaussian(dim, rng), q, 1.0),
        Family::Dense => {
            let r = rng.gen_range(0.5..=1.0);
            normalise(gaussian(dim, rng), q, r)
        }
        Family::Sparse => {
            let s = rng.gen_range(1..=dim.min(5));
            let mut x = vec![0.0; dim];
            let mut idx: Vec<usize> = (0..dim).collect();
            idx.shuffle(rng);
            for &i in &idx[..s] {
                x[i] = rng.sample(StandardNormal);
            }
            normalise(x, q, rng.gen_range(0.5..=1.0))
        }
        Family::MultiScale => {
            let x: Vec<f64> = (0..dim)
                .map(|_| {
                    let level = rng.gen_range(0..8);
                    let sign = if rng.gen() { 1.0 } else { -1.0 };
                    sign * 2f64.powi(-level) * rng.gen_range(0.5..=1.0)
                })
                .collect();
            normalise(x, q, 1.0)
        }
        Family::Vertices => {
            let mut x = vec![0.0; dim];
            x[rng.gen_range(0..dim)] = if rng.gen() { 1.0 } else { -1.0 };
            x
        }
    }
}

/// Distribution with `atoms` atoms (one for point masses) and random
/// weights.
pub fn family_distribution<R: Rng + ?Sized>(
    family: Family,
    dim: usize,
    q: f64,
    atoms: usize,
    rng: &mut R,
) -> FiniteDistribution<Vec<f64>> {
    let m = if family == Family::PointMass { 1 } else { atoms.max(1) };
    let pts: Vec<Vec<f64>> = (0..m).map(|_| atom(family, dim, q, rng)).collect();
    let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
    FiniteDistribution::new(pts, weights).expect("valid weights")
}

/// Labelled distribution on the unit `l_p` ball separated with margin
/// `margin` by a unit `l_q` vector. The separator is a random direction for
/// `p = 2` and a signed basis vector otherwise. Margins along the separator
/// are skewed towards the minimum so that near-boundary examples carry mass.
pub fn margin_distribution<R: Rng + ?Sized>(
    dim: usize,
    p: f64,
    margin: f64,
    atoms: usize,
    rng: &mut R,
) -> (FiniteDistribution<Example>, MarginCertificate) {
    assert!(margin > 0.0 && margin <= 1.0 && dim >= 2);
    let sparse = p != 2.0;
    let axis = rng.gen_range(0..dim);
    let witness = if sparse {
        let mut w = vec![0.0; dim];
        w[axis] = if rng.gen() { 1.0 } else { -1.0 };
        w
    } else {
        normalise(gaussian(dim, rng), 2.0, 1.0)
    };
    let pts: Vec<Example> = (0..atoms.max(1))
        .map(|_| {
            let y = if rng.gen() { 1.0 } else { -1.0 };
            let u: f64 = rng.gen();
            let along = margin + (1.0 - margin) * u * u;
            let mut rest = gaussian(dim, rng);
            let x = if sparse {
                rest[axis] = 0.0;
                let room = if p.is_infinite() { 1.0 } else { (1.0 - along.powf(p)).max(0.0).powf(1.0 / p) };
                let mut x = normalise(rest, p, room * rng.gen_range(0.0..=1.0));
                x[axis] = y * along * witness[axis];
                x
            } else {
                let c: f64 = rest.iter().zip(&witness).map(|(a, b)| a * b).sum();
                rest.iter_mut().zip(&witness).for_each(|(a, b)| *a -= c * b);
                let room = (1.0 - along * along).max(0.0).sqrt() * rng.gen_range(0.0..=1.0);
                let mut x = normalise(rest, 2.0, room);
                x.iter_mut().zip(&witness).for_each(|(a, b)| *a += y * along * b);
                x
            };
            Example { x, y }
        })
        .collect();
    let weights: Vec<f64> = pts.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
    let cert = MarginCertificate { p, radius: 1.0, weight_bound: 1.0, margin, witness: Some(witness) };
    (FiniteDistribution::new(pts, weights).expect("valid weights"), cert)
}

/// Random polytope inside `[-1, 1]^d` containing the ball of radius 0.3.
pub fn random_polytope<R: Rng + ?Sized>(d: usize, rng: &mut R) -> PolytopeBody {
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; d];
            a[i] = s;
            normals.push(a);
            offsets.push(1.0);
        }
    }
    for _ in 0..rng.gen_range(3..3 * d + 4) {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = lp_norm(&v, 2.0);
        normals.push(v.iter().map(|x| x / n).collect());
        offsets.push(rng.gen_range(0.3..1.0));
    }
    let cert = Sandwich { center: vec![0.0; d], inner: 0.3, outer: (d as f64).sqrt() };
    PolytopeBody::new(normals, offsets, cert).unwrap()
}
