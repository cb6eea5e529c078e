//! Linear-algebra and norm-geometry primitives shared by the estimators and
//! solvers: Hadamard transforms, Haar rotations, coordinate truncation,
//! mirror-descent setups on `l_p` balls and ellipsoidal norms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Result, SqError};

/// Conjugate exponent `q` with `1/p + 1/q = 1`. Handles `1` and infinity.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// `l_p` norm for `p` in `[1, inf]`.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return x.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if p == 2.0 {
        return x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    // scale by the max entry so large exponents do not underflow
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Smallest power of two that is `>= n` (and at least 1).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place orthonormal Walsh-Hadamard transform. The transform is symmetric
/// and its own inverse.
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(SqError::NotPowerOfTwo(n));
    }
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
    let s = 1.0 / (n as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= s);
    Ok(())
}

/// Orthonormal transform of `v` zero-padded to the next power of two.
pub fn fwht_padded(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; next_pow2(v.len())];
    out[..v.len()].copy_from_slice(v);
    fwht(&mut out).expect("padded length is a power of two");
    out
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Coordinate-wise clamp to `[-a, a]`.
pub fn truncate_coords(x: &[f64], a: f64) -> Vec<f64> {
    x.iter().map(|v| v.clamp(-a, a)).collect()
}

/// Potential used by a [`ProxSetup`].
#[derive(Debug, Clone, Copy, PartialEq)]
enum Potential {
    /// `(scale/2) ||x||_s^2`, valid for `1 < s <= 2`.
    Quadratic { s: f64, scale: f64 },
    /// `(scale/s) ||x||_s^s`, valid for `s >= 2`.
    Power { s: f64, scale: f64 },
}

/// Shape of the feasible ball.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Ball {
    /// `l_s` ball in the potential's own norm: prox steps are radial.
    SameNorm,
    /// `l_1` ball; prox steps need a soft-threshold multiplier search.
    L1,
    /// Box `[-R, R]^d`; prox steps clamp coordinate-wise.
    Box,
}

/// Mirror-descent geometry on the origin-centred `l_p` ball of radius `R`:
/// a potential `Psi` that is `r`-uniformly convex with constant one with
/// respect to `||.||_p` and attains its minimum (zero) at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxSetup {
    pub dim: usize,
    pub p: f64,
    pub radius: f64,
    potential: Potential,
    ball: Ball,
}

impl ProxSetup {
    pub fn new(dim: usize, p: f64, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(SqError::InvalidParameter("dimension must be positive".into()));
        }
        if !(p >= 1.0) || !(radius > 0.0) || !radius.is_finite() {
            return Err(SqError::InvalidParameter(format!(
                "need p >= 1 and finite radius > 0, got p={p}, R={radius}"
            )));
        }
        let ln_d = (dim as f64).ln();
        let (potential, ball) = if p == 1.0 {
            // ||x||_s >= d^{1/s-1} ||x||_1, so this scale makes Psi 1-strongly
            // convex for the l_1 norm; s falls back to 2 when d < 3.
            let s = if ln_d > 1.0 { 1.0 + 1.0 / ln_d } else { 2.0 };
            let scale = (dim as f64).powf(2.0 * (1.0 - 1.0 / s)) / (s - 1.0);
            (Potential::Quadratic { s, scale }, Ball::L1)
        } else if p < 2.0 {
            (Potential::Quadratic { s: p, scale: 1.0 / (p - 1.0) }, Ball::SameNorm)
        } else if p == 2.0 {
            (Potential::Quadratic { s: 2.0, scale: 1.0 }, Ball::SameNorm)
        } else if p.is_finite() {
            (Potential::Power { s: p, scale: 2f64.powf(p - 2.0) }, Ball::SameNorm)
        } else {
            let s = (ln_d + 1.0).max(2.0);
            (Potential::Power { s, scale: 2f64.powf(s - 2.0) }, Ball::Box)
        };
        Ok(ProxSetup { dim, p, radius, potential, ball })
    }

    /// Exponent `r` of uniform convexity.
    pub fn uniform_convexity(&self) -> f64 {
        match self.potential {
            Potential::Quadratic { .. } => 2.0,
            Potential::Power { s, .. } => s,
        }
    }

    /// Exponent of the norm the potential is built from.
    pub fn potential_norm(&self) -> f64 {
        match self.potential {
            Potential::Quadratic { s, .. } | Potential::Power { s, .. } => s,
        }
    }

    /// `sup_{x in K} Psi(x)`.
    pub fn diameter(&self) -> f64 {
        let r = self.radius;
        match (self.potential, self.ball) {
            (Potential::Quadratic { scale, .. }, _) => 0.5 * scale * r * r,
            (Potential::Power { s, scale }, Ball::Box) => scale * self.dim as f64 * r.powf(s) / s,
            (Potential::Power { s, scale }, _) => scale * r.powf(s) / s,
        }
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        lp_norm(x, self.p)
    }

    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        lp_norm(g, conjugate(self.p))
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.norm(x) <= self.radius * (1.0 + slack)
    }

    /// Minimiser of `Psi` over the ball.
    pub fn center(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        match self.potential {
            Potential::Quadratic { s, scale } => 0.5 * scale * lp_norm(x, s).powi(2),
            Potential::Power { s, scale } => scale / s * x.iter().map(|v| v.abs().powf(s)).sum::<f64>(),
        }
    }

    pub fn grad_psi(&self, x: &[f64]) -> Vec<f64> {
        match self.potential {
            Potential::Quadratic { s, scale } => {
                let n = lp_norm(x, s);
                if n == 0.0 {
                    return vec![0.0; x.len()];
                }
                let f = scale * n.powf(2.0 - s);
                x.iter().map(|v| f * v.signum() * v.abs().powf(s - 1.0)).collect()
            }
            Potential::Power { s, scale } => {
                x.iter().map(|v| scale * v.signum() * v.abs().powf(s - 1.0)).collect()
            }
        }
    }

    /// Inverse of the mirror map on the whole space.
    fn grad_conjugate(&self, theta: &[f64]) -> Vec<f64> {
        match self.potential {
            Potential::Quadratic { s, scale } => {
                let t = conjugate(s);
                let n = lp_norm(theta, t);
                if n == 0.0 {
                    return vec![0.0; theta.len()];
                }
                let f = n.powf(2.0 - t) / scale;
                theta.iter().map(|v| f * v.signum() * v.abs().powf(t - 1.0)).collect()
            }
            Potential::Power { s, scale } => theta
                .iter()
                .map(|v| v.signum() * (v.abs() / scale).powf(1.0 / (s - 1.0)))
                .collect(),
        }
    }

    /// Bregman divergence `V_x(y) = Psi(y) - Psi(x) - <grad Psi(x), y - x>`.
    pub fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        let g = self.grad_psi(x);
        let v = self.psi(y) - self.psi(x) - dot(&g, &sub(y, x));
        v.max(0.0)
    }

    /// `argmin_{y in K} Psi(y) - <c, y>`.
    pub fn argmin_linear(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, c.len())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(SqError::Numeric { message: "non-finite prox input".into(), residual: f64::NAN });
        }
        match self.ball {
            Ball::SameNorm => {
                let mut y = self.grad_conjugate(c);
                let n = lp_norm(&y, self.potential_norm());
                if n > self.radius {
                    let f = self.radius / n;
                    y.iter_mut().for_each(|v| *v *= f);
                }
                Ok(y)
            }
            Ball::Box => Ok(self
                .grad_conjugate(c)
                .into_iter()
                .map(|v| v.clamp(-self.radius, self.radius))
                .collect()),
            Ball::L1 => self.argmin_linear_l1(c),
        }
    }

    // Soft-threshold the dual point by a multiplier found by bisection so the
    // primal point lands on the l_1 sphere.
    fn argmin_linear_l1(&self, c: &[f64]) -> Result<Vec<f64>> {
        let at = |lam: f64| {
            let shrunk: Vec<f64> = c.iter().map(|v| v.signum() * (v.abs() - lam).max(0.0)).collect();
            self.grad_conjugate(&shrunk)
        };
        let y0 = at(0.0);
        if lp_norm(&y0, 1.0) <= self.radius {
            return Ok(y0);
        }
        let (mut lo, mut hi) = (0.0, lp_norm(c, f64::INFINITY));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lp_norm(&at(mid), 1.0) > self.radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * hi.max(1e-300) {
                break;
            }
        }
        let mut y = at(hi);
        let n = lp_norm(&y, 1.0);
        if n > self.radius {
            let f = self.radius / n;
            y.iter_mut().for_each(|v| *v *= f);
        }
        if (self.radius - lp_norm(&y, 1.0)).abs() > 1e-6 * self.radius {
            return Err(SqError::Numeric {
                message: "l1 prox multiplier search did not reach the sphere".into(),
                residual: (self.radius - lp_norm(&y, 1.0)).abs(),
            });
        }
        Ok(y)
    }

    /// `argmin_{y in K} step*<g, y - x> + V_x(y)`.
    pub fn prox_step(&self, x: &[f64], g: &[f64], step: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, g.len())?;
        let c: Vec<f64> = self.grad_psi(x).iter().zip(g).map(|(a, b)| a - step * b).collect();
        self.argmin_linear(&c)
    }
}

/// Ellipsoid `{center + L u : ||u||_2 <= 1}` with shape matrix `A = L L^T`.
#[derive(Debug, Clone)]
pub struct EllipsoidSpec {
    pub center: Vec<f64>,
    factor: DMatrix<f64>,
    factor_inv: DMatrix<f64>,
}

impl EllipsoidSpec {
    /// Ellipsoid `{y : (y-c)^T A^{-1} (y-c) <= 1}` for symmetric positive
    /// definite `A`.
    pub fn from_shape(center: Vec<f64>, shape: &DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        if shape.nrows() != d || shape.ncols() != d {
            return Err(SqError::DimensionMismatch { expected: d, actual: shape.nrows() });
        }
        let sym = (shape + shape.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo > 0.0) || lo < 1e-12 * hi {
            return Err(SqError::Conditioning(format!("shape eigenvalues span [{lo:e}, {hi:e}]")));
        }
        let chol = sym
            .cholesky()
            .ok_or_else(|| SqError::Conditioning("Cholesky factorisation failed".into()))?;
        Self::from_factor(center, chol.l())
    }

    /// Ellipsoid `center + factor * B_2`.
    pub fn from_factor(center: Vec<f64>, factor: DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        if factor.nrows() != d || factor.ncols() != d {
            return Err(SqError::DimensionMismatch { expected: d, actual: factor.nrows() });
        }
        let factor_inv = factor
            .clone()
            .try_inverse()
            .ok_or_else(|| SqError::Conditioning("singular ellipsoid factor".into()))?;
        Ok(EllipsoidSpec { center, factor, factor_inv })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `L^{-1}(y - center)`.
    pub fn whiten(&self, y: &[f64]) -> Vec<f64> {
        let v = DVector::from_iterator(y.len(), y.iter().zip(&self.center).map(|(a, c)| a - c));
        (&self.factor_inv * v).iter().copied().collect()
    }

    /// `center + L u`.
    pub fn unwhiten(&self, u: &[f64]) -> Vec<f64> {
        let v = &self.factor * DVector::from_column_slice(u);
        v.iter().zip(&self.center).map(|(a, c)| a + c).collect()
    }

    /// Gauge norm of a displacement: `||L^{-1} v||_2`.
    pub fn norm(&self, v: &[f64]) -> f64 {
        (&self.factor_inv * DVector::from_column_slice(v)).norm()
    }

    /// Dual gauge norm: `sup_{u in E - c} <g, u> = ||L^T g||_2`.
    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        (self.factor.transpose() * DVector::from_column_slice(g)).norm()
    }
}
