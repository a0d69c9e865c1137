//! Fréchet distance between Gaussians fitted to two feature sets.
//!
//! `FD = ‖μ_s − μ_r‖² + Tr(Σ_s + Σ_r − 2 (Σ_s Σ_r)^{1/2})`
//!
//! `Σ_s Σ_r` is not symmetric, so its square root is never formed. The trace
//! of the cross term equals `Tr((Σ_r^{1/2} Σ_s Σ_r^{1/2})^{1/2})`, where every
//! square root acts on a symmetric PSD matrix and can go through a symmetric
//! eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::{normalize, FeatureMatrix, NormalizationSpec};
use crate::report::{MetricKind, MetricResult};

/// Relative tolerance for treating a matrix as symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Slightly negative FD values down to this are rounding noise and read as 0.
pub const NEGATIVE_FD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n_samples: usize,
}

impl GaussianMoments {
    /// Validates user-supplied moments: shapes agree, `cov` is symmetric and
    /// has no eigenvalue below `−1e-8 · trace / d`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n_samples: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch(d, cov.nrows()));
        }
        check_symmetric(&cov)?;
        let sym = symmetrize(&cov);
        let floor = -1e-8 * sym.trace().abs() / d as f64;
        let min_eig = sym
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < floor {
            return Err(Error::NumericalFailure(format!(
                "covariance has eigenvalue {min_eig:e}, below tolerance {floor:e}"
            )));
        }
        Ok(Self {
            mean,
            cov: sym,
            n_samples,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and unbiased (divisor `n − 1`) covariance.
pub fn fit_moments(x: &FeatureMatrix) -> Result<GaussianMoments> {
    let (n, d) = (x.n(), x.d());
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    let mut mean = DVector::zeros(d);
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;

    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let mut cov = centered.tr_mul(&centered);
    cov /= (n - 1) as f64;

    Ok(GaussianMoments {
        mean,
        cov: symmetrize(&cov),
        n_samples: n,
    })
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(a.nrows(), a.ncols()));
    }
    let scale = a.amax();
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix, `V · diag(√max(λ, 0)) · Vᵀ`.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    let eig = SymmetricEigen::new(symmetrize(a));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&roots);
    Ok(symmetrize(&(scaled * v.transpose())))
}

/// `Tr((Σ_r^{1/2} Σ_s Σ_r^{1/2})^{1/2})`, the trace of `(Σ_s Σ_r)^{1/2}`.
fn cross_trace(sigma_s: &DMatrix<f64>, sigma_r: &DMatrix<f64>) -> Result<f64> {
    let root_r = sqrtm_psd(sigma_r)?;
    let inner = symmetrize(&(&root_r * sigma_s * &root_r));
    Ok(inner
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum())
}

pub fn frechet_distance(real: &GaussianMoments, syn: &GaussianMoments) -> Result<f64> {
    frechet_distance_regularized(real, syn, 0.0)
}

/// As [`frechet_distance`], with `eps · I` added to both covariances first.
///
/// Any `eps > 0` biases the distance; it exists for near-singular covariances
/// in very high dimension and is off by default.
pub fn frechet_distance_regularized(
    real: &GaussianMoments,
    syn: &GaussianMoments,
    eps: f64,
) -> Result<f64> {
    if real.dim() != syn.dim() {
        return Err(Error::DimensionMismatch(real.dim(), syn.dim()));
    }
    let d = real.dim();
    let reg = |c: &DMatrix<f64>| {
        if eps == 0.0 {
            c.clone()
        } else {
            c + DMatrix::identity(d, d) * eps
        }
    };
    let (sigma_r, sigma_s) = (reg(&real.cov), reg(&syn.cov));

    let mean_term = (&syn.mean - &real.mean).norm_squared();
    let cross = cross_trace(&sigma_s, &sigma_r)?;
    let fd = mean_term + sigma_s.trace() + sigma_r.trace() - 2.0 * cross;

    if !fd.is_finite() {
        return Err(Error::NumericalFailure(format!("fd evaluated to {fd}")));
    }
    if fd < 0.0 {
        if fd >= -NEGATIVE_FD_TOLERANCE {
            return Ok(0.0);
        }
        return Err(Error::NumericalFailure(format!("fd evaluated to {fd:e}")));
    }
    Ok(fd)
}

/// normalize → fit_moments → frechet_distance, with provenance.
pub fn frechet_from_features(
    real: &FeatureMatrix,
    syn: &FeatureMatrix,
    norm: NormalizationSpec,
) -> Result<MetricResult> {
    let real_n = normalize(real, norm)?;
    let syn_n = normalize(syn, norm)?;
    if real_n.d() != syn_n.d() {
        return Err(Error::DimensionMismatch(real_n.d(), syn_n.d()));
    }
    let value = frechet_distance(&fit_moments(&real_n)?, &fit_moments(&syn_n)?)?;
    Ok(MetricResult {
        metric: MetricKind::Fd,
        value,
        extractor_id: String::new(),
        layer_id: String::new(),
        kernel: None,
        normalization: norm,
        n_real: real.n(),
        n_syn: syn.n(),
        seed: None,
        bandwidth_used: None,
        subset: None,
        warnings: Vec::new(),
    })
}
