//! Tight frames with bounded-coefficient (Kashin) representations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Result, SqError};

/// Default redundancy `N / d`.
pub const DEFAULT_REDUNDANCY: usize = 2;
/// Truncation constant used by the representation iteration.
pub const DEFAULT_TRUNCATION: f64 = 0.75;
/// Largest level accepted at calibration time.
pub const LEVEL_LIMIT: f64 = 4.0;
const CALIBRATION_VECTORS: usize = 1000;
const CALIBRATION_MARGIN: f64 = 1.1;

/// Tight frame `u_1, .., u_N` in `R^d`, stored as the columns of a `d x N`
/// matrix with orthonormal rows, together with a calibrated level `K`: every
/// `w` has coefficients `a` with `sum_j a_j u_j = w` and
/// `||a||_inf <= K ||w||_2 / sqrt(N)`.
#[derive(Debug, Clone)]
pub struct KashinFrame {
    frame: DMatrix<f64>,
    level: f64,
    truncation: f64,
    iterations: usize,
}

impl KashinFrame {
    /// Random frame of size `redundancy * d` from `seed`, with the level
    /// calibrated on random unit vectors, the standard basis and random
    /// sparse vectors.
    pub fn build(dim: usize, redundancy: usize, seed: u64) -> Result<Self> {
        Self::build_with(dim, redundancy, DEFAULT_TRUNCATION, seed)
    }

    pub fn build_with(dim: usize, redundancy: usize, truncation: f64, seed: u64) -> Result<Self> {
        if dim == 0 || redundancy < 2 {
            return Err(SqError::InvalidParameter(format!(
                "need d >= 1 and redundancy >= 2, got d={dim}, redundancy={redundancy}"
            )));
        }
        let n = redundancy * dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // orthonormal columns of an N x d Gaussian matrix, transposed
        let g = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let frame = g.qr().q().transpose();
        let iterations = (n as f64).log2().ceil() as usize + 5;
        let mut kf = KashinFrame { frame, level: f64::INFINITY, truncation, iterations };

        let mut probes = DMatrix::<f64>::zeros(dim, CALIBRATION_VECTORS + 2 * dim);
        for c in 0..CALIBRATION_VECTORS {
            for r in 0..dim {
                probes[(r, c)] = rng.sample(StandardNormal);
            }
        }
        for i in 0..dim {
            probes[(i, CALIBRATION_VECTORS + i)] = 1.0;
            let s = rng.gen_range(1..=dim.min(4));
            for _ in 0..s {
                probes[(rng.gen_range(0..dim), CALIBRATION_VECTORS + dim + i)] = if rng.gen() { 1.0 } else { -1.0 };
            }
        }
        let (_, levels) = kf.represent_columns(&probes);
        let worst = levels.iter().cloned().fold(0.0, f64::max);
        kf.level = worst * CALIBRATION_MARGIN;
        Ok(kf)
    }

    /// Frame of redundancy 2 for dimension `d`, built once per process.
    pub fn shared(dim: usize) -> Result<Arc<KashinFrame>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<KashinFrame>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(f) = cache.lock().unwrap().get(&dim) {
            return Ok(f.clone());
        }
        let f = Arc::new(Self::build(dim, DEFAULT_REDUNDANCY, 0x5eed_0000 ^ dim as u64)?);
        cache.lock().unwrap().insert(dim, f.clone());
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.frame.nrows()
    }

    /// Number of frame vectors `N`.
    pub fn size(&self) -> usize {
        self.frame.ncols()
    }

    /// Calibrated level `K`.
    pub fn level(&self) -> f64 {
        self.level
    }

    /// The `d x N` synthesis matrix; its columns are the frame vectors.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// Frame coefficients `<w, u_j>`.
    pub fn analyze(&self, w: &[f64]) -> Vec<f64> {
        (self.frame.transpose() * DVector::from_column_slice(w)).iter().copied().collect()
    }

    /// `sum_j a_j u_j`.
    pub fn synthesize(&self, a: &[f64]) -> Vec<f64> {
        (&self.frame * DVector::from_column_slice(a)).iter().copied().collect()
    }

    // Truncate-and-subtract iteration on a block of columns, finished by the
    // exact frame expansion of the remaining residual. Returns coefficients
    // and the achieved level sqrt(N) ||a||_inf / ||w||_2 per column.
    fn represent_columns(&self, w: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.size();
        let sqrt_n = (n as f64).sqrt();
        let cols = w.ncols();
        let norms: Vec<f64> = (0..cols).map(|c| w.column(c).norm()).collect();
        let mut resid = w.clone();
        let mut coef = DMatrix::<f64>::zeros(n, cols);
        let ft = self.frame.transpose();
        for _ in 0..self.iterations {
            let mut c = &ft * &resid;
            let mut active = false;
            for j in 0..cols {
                let r = resid.column(j).norm();
                if r <= 1e-15 * norms[j] {
                    c.column_mut(j).fill(0.0);
                    continue;
                }
                active = true;
                let t = self.truncation * r / sqrt_n;
                c.column_mut(j).iter_mut().for_each(|v| *v = v.clamp(-t, t));
            }
            if !active {
                break;
            }
            resid -= &self.frame * &c;
            coef += c;
        }
        coef += &ft * &resid;
        let levels = (0..cols)
            .map(|j| if norms[j] == 0.0 { 0.0 } else { sqrt_n * coef.column(j).amax() / norms[j] })
            .collect();
        (coef, levels)
    }

    /// Coefficients `a` with `sum a_j u_j = w` and level at most `K`.
    pub fn represent(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), w.len())?;
        let (a, levels) = self.represent_columns(&DMatrix::from_column_slice(w.len(), 1, w));
        if levels[0] > self.level {
            return Err(SqError::Calibration { achieved: levels[0], limit: self.level });
        }
        Ok(a.iter().copied().collect())
    }

    /// Writes the representation of `w` into `out` and returns its level,
    /// without checking it against `K`.
    pub fn represent_into(&self, w: &[f64], out: &mut [f64]) -> f64 {
        let (a, levels) = self.represent_columns(&DMatrix::from_column_slice(w.len(), 1, w));
        out.copy_from_slice(a.as_slice());
        levels[0]
    }
}
