//! Shared numerical kernels: block assembly, numeric rank, Hermitian log-det,
//! least squares and seeded complex Gaussian sampling.

use nalgebra::{Complex, DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Environment variables that override [`ToleranceConfig::default`].
pub const ENV_RANK_TOL: &str = "XSDOF_RANK_TOL";
pub const ENV_SLOPE_TOL: &str = "XSDOF_SLOPE_TOL";
pub const ENV_LEAKAGE_SLOPE_TOL: &str = "XSDOF_LEAKAGE_SLOPE_TOL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("tolerance `{name}` must be strictly positive and finite, got {value}")]
    InvalidTolerance { name: &'static str, value: f64 },
    #[error("snr must be strictly positive and finite, got {0}")]
    InvalidSnr(f64),
    #[error("block ({row}, {col}) has shape {got:?}, expected {expected:?}")]
    BlockShape {
        row: usize,
        col: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("right-hand side has length {got}, expected {expected}")]
    RhsLength { got: usize, expected: usize },
    #[error("SVD failed to converge")]
    SvdFailed,
    #[error("cannot parse tolerance override `{name}`: {value:?}")]
    BadOverride { name: &'static str, value: String },
}

/// Tolerances used by rank certification and slope tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Singular values at or below `rank_rel_tol * sigma_max * max(rows, cols)` count as zero.
    pub rank_rel_tol: f64,
    pub slope_tol: f64,
    pub leakage_slope_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rank_rel_tol: 1e-9,
            slope_tol: 0.1,
            leakage_slope_tol: 0.05,
        }
    }
}

impl ToleranceConfig {
    pub fn new(
        rank_rel_tol: f64,
        slope_tol: f64,
        leakage_slope_tol: f64,
    ) -> Result<Self, NumericsError> {
        let cfg = Self {
            rank_rel_tol,
            slope_tol,
            leakage_slope_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        for (name, value) in [
            ("rank_rel_tol", self.rank_rel_tol),
            ("slope_tol", self.slope_tol),
            ("leakage_slope_tol", self.leakage_slope_tol),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(NumericsError::InvalidTolerance { name, value });
            }
        }
        Ok(())
    }

    /// Defaults, overridden by any of the `XSDOF_*_TOL` environment variables that are set.
    pub fn from_env() -> Result<Self, NumericsError> {
        let mut cfg = Self::default();
        for (name, slot) in [
            (ENV_RANK_TOL, &mut cfg.rank_rel_tol),
            (ENV_SLOPE_TOL, &mut cfg.slope_tol),
            (ENV_LEAKAGE_SLOPE_TOL, &mut cfg.leakage_slope_tol),
        ] {
            if let Ok(raw) = std::env::var(name) {
                *slot = raw
                    .trim()
                    .parse()
                    .map_err(|_| NumericsError::BadOverride { name, value: raw })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_finite(m: &CMatrix) -> Result<(), NumericsError> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// Singular values in descending order; empty for matrices with a zero dimension.
pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>, NumericsError> {
    ensure_finite(m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0).ok_or(NumericsError::SvdFailed)?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

fn rank_threshold(sigma_max: f64, rows: usize, cols: usize, tol: &ToleranceConfig) -> f64 {
    tol.rank_rel_tol * sigma_max * rows.max(cols) as f64
}

/// Count of singular values strictly above the relative rank threshold.
pub fn numeric_rank(m: &CMatrix, tol: &ToleranceConfig) -> Result<usize, NumericsError> {
    let sv = singular_values(m)?;
    let Some(&sigma_max) = sv.first() else {
        return Ok(0);
    };
    if sigma_max == 0.0 {
        return Ok(0);
    }
    let thr = rank_threshold(sigma_max, m.nrows(), m.ncols(), tol);
    Ok(sv.iter().filter(|&&s| s > thr).count())
}

/// `log2 det(I + snr * G G^H)`, evaluated as `sum log2(1 + snr * sigma_i^2)` over the
/// singular values of `G` (the nonzero eigenvalues of the Gram matrix).
pub fn logdet_capacity(g: &CMatrix, snr: f64) -> Result<f64, NumericsError> {
    if !(snr.is_finite() && snr > 0.0) {
        return Err(NumericsError::InvalidSnr(snr));
    }
    let sv = singular_values(g)?;
    Ok(sv
        .iter()
        .map(|s| (snr * s * s).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2)
}

/// Minimum-norm least-squares solution of `a x = b`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: CVector,
    pub rank: usize,
    /// Smallest singular value kept by the solve (0 when nothing is kept).
    pub smallest_retained: f64,
    pub residual_norm: f64,
}

pub fn least_squares(
    a: &CMatrix,
    b: &CVector,
    tol: &ToleranceConfig,
) -> Result<LeastSquares, NumericsError> {
    ensure_finite(a)?;
    if b.len() != a.nrows() {
        return Err(NumericsError::RhsLength {
            got: b.len(),
            expected: a.nrows(),
        });
    }
    if a.is_empty() {
        return Ok(LeastSquares {
            solution: CVector::zeros(a.ncols()),
            rank: 0,
            smallest_retained: 0.0,
            residual_norm: b.norm(),
        });
    }
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 0).ok_or(NumericsError::SvdFailed)?;
    let sigma_max = svd.singular_values.max();
    let thr = rank_threshold(sigma_max, a.nrows(), a.ncols(), tol);
    let kept: Vec<f64> = svd
        .singular_values
        .iter()
        .copied()
        .filter(|&s| s > thr)
        .collect();
    let solution = svd.solve(b, thr).map_err(|_| NumericsError::SvdFailed)?;
    let residual_norm = (a * &solution - b).norm();
    Ok(LeastSquares {
        solution,
        rank: kept.len(),
        smallest_retained: kept.iter().copied().fold(f64::INFINITY, f64::min).min(sigma_max),
        residual_norm,
    })
}

/// Deterministic seed splitting: SplitMix64 finaliser of `master ^ (stream * golden)`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// One circularly-symmetric complex Gaussian sample with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Row-major fill so the draw order is independent of nalgebra's storage order.
pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    let data: Vec<C64> = (0..rows * cols).map(|_| complex_gaussian(rng)).collect();
    CMatrix::from_row_slice(rows, cols, &data)
}

pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVector {
    CVector::from_iterator(len, (0..len).map(|_| complex_gaussian(rng)))
}

pub fn block_diagonal<'a, I>(blocks: I) -> CMatrix
where
    I: IntoIterator<Item = &'a CMatrix>,
    I::IntoIter: Clone,
{
    let iter = blocks.into_iter();
    let rows: usize = iter.clone().map(|b| b.nrows()).sum();
    let cols: usize = iter.clone().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in iter {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn vstack(parts: &[&CVector]) -> CVector {
    let len = parts.iter().map(|p| p.len()).sum();
    CVector::from_iterator(len, parts.iter().flat_map(|p| p.iter().copied()))
}

/// Vertical concatenation; `cols` fixes the width when `parts` is empty.
pub fn vstack_rows(parts: &[CMatrix], cols: usize) -> CMatrix {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    out
}

/// A matrix assembled from a grid of blocks with fixed row heights and column widths.
/// Unset blocks are exactly zero; zero-height or zero-width bands are allowed.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    heights: Vec<usize>,
    widths: Vec<usize>,
    matrix: CMatrix,
}

impl BlockGrid {
    pub fn new(heights: &[usize], widths: &[usize]) -> Self {
        let matrix = CMatrix::zeros(heights.iter().sum(), widths.iter().sum());
        Self {
            heights: heights.to_vec(),
            widths: widths.to_vec(),
            matrix,
        }
    }

    fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (
            self.heights[..row].iter().sum(),
            self.widths[..col].iter().sum(),
        )
    }

    pub fn set(&mut self, row: usize, col: usize, block: &CMatrix) -> Result<(), NumericsError> {
        let expected = (self.heights[row], self.widths[col]);
        if block.shape() != expected {
            return Err(NumericsError::BlockShape {
                row,
                col,
                got: block.shape(),
                expected,
            });
        }
        let origin = self.origin(row, col);
        self.matrix.view_mut(origin, expected).copy_from(block);
        Ok(())
    }

    pub fn set_identity(&mut self, row: usize, col: usize) -> Result<(), NumericsError> {
        let n = self.heights[row];
        self.set(row, col, &CMatrix::identity(n, n))
    }

    pub fn block(&self, row: usize, col: usize) -> CMatrix {
        let origin = self.origin(row, col);
        self.matrix
            .view(origin, (self.heights[row], self.widths[col]))
            .into_owned()
    }

    /// The given block rows, stacked, over all columns.
    pub fn rows(&self, bands: &[usize]) -> CMatrix {
        let total: usize = bands.iter().map(|&b| self.heights[b]).sum();
        let mut out = CMatrix::zeros(total, self.matrix.ncols());
        let mut r = 0;
        for &band in bands {
            let (start, _) = self.origin(band, 0);
            let h = self.heights[band];
            out.rows_mut(r, h).copy_from(&self.matrix.rows(start, h));
            r += h;
        }
        out
    }

    pub fn heights(&self) -> &[usize] {
        &self.heights
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }
}
