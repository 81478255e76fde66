//! Dense linear-algebra primitives shared by the rest of the crate.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` and is a pure function of
//! its arguments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;

/// Relative symmetry tolerance for covariance-like inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues below `-PSD_CLIP_TOL * max(λ_max, 1)` are treated as genuine indefiniteness.
pub const PSD_CLIP_TOL: f64 = 1e-10;

pub(crate) fn ensure_finite(m: &RealMatrix, name: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{name} has non-finite entries")))
    }
}

pub(crate) fn ensure_finite_vec(v: &RealVector, name: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{name} has non-finite entries")))
    }
}

/// Numerical rank together with the singular values it was decided from.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

fn sorted_singular_values(m: &RealMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Default numerical-rank threshold `max(rows, cols) · ε · σ_max`.
pub fn default_rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Counts singular values strictly above `tol` (default: [`default_rank_tolerance`]).
pub fn rank_with_tolerance(m: &RealMatrix, tol: Option<f64>) -> Result<RankInfo> {
    ensure_finite(m, "matrix")?;
    if let Some(t) = tol {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid("rank tolerance must be a finite nonnegative number"));
        }
    }
    let singular_values = sorted_singular_values(m);
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance = tol.unwrap_or_else(|| default_rank_tolerance(m.nrows(), m.ncols(), sigma_max));
    let rank = singular_values.iter().filter(|&&s| s > tolerance).count();
    Ok(RankInfo {
        rank,
        singular_values,
        tolerance,
    })
}

pub fn rank(m: &RealMatrix) -> Result<usize> {
    Ok(rank_with_tolerance(m, None)?.rank)
}

/// Flips `v` so that its first entry of largest magnitude is positive.
pub(crate) fn canonical_sign(v: &mut RealVector) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Unit vector `a` with `a^* M ≈ 0` when `M` (d×k) has rank below `d`.
///
/// The witness is the left singular vector of the smallest singular value, so
/// `‖a^* M‖₂` equals that singular value, which is below the rank threshold.
pub fn null_left_witness(m: &RealMatrix) -> Result<Option<RealVector>> {
    ensure_finite(m, "matrix")?;
    let d = m.nrows();
    if d == 0 {
        return Ok(None);
    }
    let info = rank_with_tolerance(m, None)?;
    if info.rank >= d {
        return Ok(None);
    }
    // Pad with zero columns so the SVD yields a full d×d left basis.
    let cols = m.ncols().max(d);
    let mut padded = RealMatrix::zeros(d, cols);
    padded.view_mut((0, 0), (d, m.ncols())).copy_from(m);
    let svd = padded.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numeric("SVD did not return left singular vectors".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut a = u.column(idx).into_owned();
    a /= a.norm();
    canonical_sign(&mut a);
    Ok(Some(a))
}

/// Moore–Penrose pseudo-inverse with the default rank threshold.
pub fn pseudo_inverse(m: &RealMatrix) -> Result<RealMatrix> {
    ensure_finite(m, "matrix")?;
    let sv = sorted_singular_values(m);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let eps = default_rank_tolerance(m.nrows(), m.ncols(), sigma_max);
    m.clone()
        .svd(true, true)
        .pseudo_inverse(eps.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numeric(e.to_string()))
}

/// `M^*(M M^*)^{-1}` for a full-row-rank `M`.
pub fn right_inverse(m: &RealMatrix) -> Result<RealMatrix> {
    let gram = m * m.transpose();
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::SynthesisUnavailable("M M^* is singular".into()))?;
    Ok(m.transpose() * inv)
}

/// `exp(t·A)`.
///
/// Backed by nalgebra's scaling-and-squaring Padé approximant; `t = 0` and the
/// zero generator return the identity exactly.
pub fn matrix_exponential(a: &RealMatrix, t: f64) -> Result<RealMatrix> {
    if !a.is_square() {
        return Err(invalid(format!(
            "matrix exponential needs a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "generator")?;
    if !t.is_finite() {
        return Err(invalid("time argument must be finite"));
    }
    let n = a.nrows();
    if t == 0.0 || a.iter().all(|&x| x == 0.0) {
        return Ok(RealMatrix::identity(n, n));
    }
    let scaled = a * t;
    let e = scaled.exp();
    if e.iter().all(|x| x.is_finite()) {
        Ok(e)
    } else {
        Err(Error::Range(format!(
            "exp(tA) overflows (‖tA‖_F = {:e})",
            scaled.norm()
        )))
    }
}

/// Eigen-pairs of a symmetric PSD matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors, one per eigenvalue.
    pub eigenvectors: Vec<RealVector>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> RealMatrix {
        let d = self.eigenvectors.first().map_or(0, |v| v.len());
        let mut out = RealMatrix::zeros(d, d);
        for (mu, z) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            out += z * z.transpose() * *mu;
        }
        out
    }
}

fn ensure_symmetric(sigma: &RealMatrix) -> Result<()> {
    if !sigma.is_square() {
        return Err(invalid(format!(
            "expected a square matrix, got {}×{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    ensure_finite(sigma, "covariance")?;
    let asym = (sigma - sigma.transpose()).amax();
    let scale = sigma.amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
        )));
    }
    Ok(())
}

fn symmetrized(sigma: &RealMatrix) -> RealMatrix {
    (sigma + sigma.transpose()) * 0.5
}

fn sorted_eigen(sym: RealMatrix) -> (Vec<f64>, Vec<RealVector>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            canonical_sign(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

/// Spectral decomposition `Σ = Σ_k μ_k ζ_k ζ_k^*` of a symmetric PSD matrix.
///
/// Round-off negatives above `-1e-10·max(λ_max, 1)` are clipped to zero.
pub fn psd_spectral_decomposition(sigma: &RealMatrix) -> Result<SpectralDecomposition> {
    ensure_symmetric(sigma)?;
    let (mut eigenvalues, eigenvectors) = sorted_eigen(symmetrized(sigma));
    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(1.0);
    let threshold = PSD_CLIP_TOL * scale;
    for mu in eigenvalues.iter_mut() {
        if *mu < -threshold {
            return Err(Error::NotPsd {
                eigenvalue: *mu,
                threshold,
            });
        }
        if *mu < 0.0 {
            *mu = 0.0;
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Principal square root of a PSD matrix.
pub fn psd_sqrt(sigma: &RealMatrix) -> Result<RealMatrix> {
    let sd = psd_spectral_decomposition(sigma)?;
    Ok(sqrt_from_pairs(&sd.eigenvalues, &sd.eigenvectors, sigma.nrows()))
}

fn sqrt_from_pairs(values: &[f64], vectors: &[RealVector], d: usize) -> RealMatrix {
    let mut out = RealMatrix::zeros(d, d);
    for (mu, z) in values.iter().zip(vectors) {
        out += z * z.transpose() * mu.max(0.0).sqrt();
    }
    out
}

/// Gaussian law `𝒩(mean, covariance)` on `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: RealVector,
    pub covariance: RealMatrix,
}

impl GaussianLaw {
    pub fn new(mean: RealVector, covariance: RealMatrix) -> Result<Self> {
        ensure_finite_vec(&mean, "mean")?;
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(invalid(format!(
                "covariance is {}×{} but mean has length {}",
                covariance.nrows(),
                covariance.ncols(),
                mean.len()
            )));
        }
        psd_spectral_decomposition(&covariance)?;
        Ok(Self {
            mean,
            covariance: symmetrized(&covariance),
        })
    }

    /// Dirac mass at `x`.
    pub fn point(x: RealVector) -> Self {
        let d = x.len();
        Self {
            mean: x,
            covariance: RealMatrix::zeros(d, d),
        }
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            RealVector::from_element(1, mean),
            RealMatrix::from_element(1, 1, variance),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.covariance.iter().all(|&x| x == 0.0)
    }
}

/// 2-Wasserstein distance between two Gaussian laws.
///
/// `W₂² = ‖α₁−α₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
pub fn gaussian_w2(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", p.dim(), q.dim())));
    }
    if p == q {
        return Ok(0.0);
    }
    let mean_sq = (&p.mean - &q.mean).norm_squared();
    let root_q = psd_sqrt(&q.covariance)?;
    let inner = symmetrized(&(&root_q * &p.covariance * &root_q));
    let (values, _) = sorted_eigen(inner);
    let cross: f64 = values.iter().map(|mu| mu.max(0.0).sqrt()).sum();
    let bures = p.covariance.trace() + q.covariance.trace() - 2.0 * cross;
    Ok((mean_sq + bures.max(0.0)).sqrt())
}

/// `[M | A M | … | A^{m} M]`.
pub fn krylov_block(a: &RealMatrix, m: &RealMatrix, max_power: usize) -> RealMatrix {
    let d = m.nrows();
    let k = m.ncols();
    let mut out = RealMatrix::zeros(d, k * (max_power + 1));
    let mut term = m.clone();
    for p in 0..=max_power {
        out.view_mut((0, p * k), (d, k)).copy_from(&term);
        if p < max_power {
            term = a * term;
        }
    }
    out
}

/// 2-norm condition number; `None` for a numerically singular matrix.
pub fn condition_number(m: &RealMatrix) -> Result<Option<f64>> {
    let info = rank_with_tolerance(m, None)?;
    if info.rank < m.nrows().min(m.ncols()) || info.singular_values.is_empty() {
        return Ok(None);
    }
    let max = info.singular_values[0];
    let min = *info.singular_values.last().expect("non-empty");
    Ok(Some(max / min))
}
