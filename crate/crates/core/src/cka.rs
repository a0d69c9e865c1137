//! HSIC and centered kernel alignment between two feature sets.
//!
//! `HSIC(K, L) = Tr(K H L H) / (n − 1)²` with `H = I − 11ᵀ/n`, and
//! `CKA = HSIC(K, L) / √(HSIC(K, K) · HSIC(L, L))`.
//!
//! Rows of the two sets are compared by position, so both Grams must have the
//! same `n`; a larger set is subsampled down to the smaller one with the run
//! seed.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{normalize, subsample, FeatureMatrix, NormalizationSpec};
use crate::kernel::{center, frobenius_inner, gram, median_heuristic, GramMatrix, KernelKind, KernelSpec};
use crate::report::{MetricKind, MetricResult};

/// Upper bound on samples per side for RBF and polynomial CKA. A float64
/// Gram at this size occupies 1.6 GB in packed form.
pub const DEFAULT_MAX_SAMPLES: usize = 20_000;

/// Relative magnitude below which a self-HSIC is treated as zero.
const DEGENERATE_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkaOptions {
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_median_cap")]
    pub median_cap: usize,
}

fn default_max_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

fn default_median_cap() -> usize {
    crate::kernel::DEFAULT_MEDIAN_CAP
}

impl Default for CkaOptions {
    fn default() -> Self {
        Self {
            max_samples: DEFAULT_MAX_SAMPLES,
            median_cap: crate::kernel::DEFAULT_MEDIAN_CAP,
        }
    }
}

/// `Tr(K̃ L̃) / (n − 1)²`. Uncentered inputs are centered first.
pub fn hsic(kx: &GramMatrix, ky: &GramMatrix) -> Result<f64> {
    if kx.n() != ky.n() {
        return Err(Error::SizeMismatch(kx.n(), ky.n()));
    }
    fn centered(g: &GramMatrix) -> Result<Cow<'_, GramMatrix>> {
        if g.is_centered() {
            Ok(Cow::Borrowed(g))
        } else {
            Ok(Cow::Owned(center(g.clone())?))
        }
    }
    let (kx, ky) = (centered(kx)?, centered(ky)?);
    hsic_centered(&kx, &ky)
}

fn hsic_centered(kx: &GramMatrix, ky: &GramMatrix) -> Result<f64> {
    debug_assert!(kx.is_centered() && ky.is_centered());
    let n = kx.n();
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    let denom = ((n - 1) * (n - 1)) as f64;
    let value = frobenius_inner(kx, ky)? / denom;
    if (-1e-12..0.0).contains(&value) {
        return Ok(0.0);
    }
    Ok(value)
}

/// Picks the RBF σ for a pair of sets: the override when present, otherwise
/// fraction × median pairwise distance over both sets.
pub fn shared_bandwidth(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    kernel: &KernelSpec,
    median_cap: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if kernel.kind != KernelKind::Rbf {
        return Ok(None);
    }
    if let Some(sigma) = kernel.bandwidth_override {
        return Ok(Some(sigma));
    }
    let total = x.n() + y.n();
    let median = if total > median_cap {
        // Split the cap in proportion to the set sizes so the chosen points do
        // not depend on argument order.
        let cap_x = (median_cap * x.n() / total).clamp(2, x.n());
        let cap_y = (median_cap - cap_x).clamp(2, y.n());
        median_heuristic(&subsample(x, cap_x, seed)?, &subsample(y, cap_y, seed)?, usize::MAX, seed)?
    } else {
        median_heuristic(x, y, usize::MAX, seed)?
    };
    Ok(Some(kernel.bandwidth_fraction * median))
}

pub fn cka(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    kernel: &KernelSpec,
    norm: NormalizationSpec,
    seed: u64,
) -> Result<MetricResult> {
    cka_with(x, y, kernel, norm, seed, &CkaOptions::default())
}

pub fn cka_with(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    kernel: &KernelSpec,
    norm: NormalizationSpec,
    seed: u64,
    options: &CkaOptions,
) -> Result<MetricResult> {
    kernel.validate()?;
    let mut x = normalize(x, norm)?;
    let mut y = normalize(y, norm)?;
    if x.d() != y.d() {
        return Err(Error::DimensionMismatch(x.d(), y.d()));
    }
    let (n_real, n_syn) = (x.n(), y.n());
    let mut warnings = Vec::new();

    let n = x.n().min(y.n());
    if x.n() > n {
        x = subsample(&x, n, seed)?;
    }
    if y.n() > n {
        y = subsample(&y, n, seed)?;
    }
    if n_real != n_syn {
        warnings.push(format!("unequal sample counts ({n_real} vs {n_syn}); larger set subsampled to {n}"));
    }

    let n = if kernel.kind != KernelKind::Linear && n > options.max_samples {
        let cap = options.max_samples;
        log::warn!("cka: {n} samples per side exceeds cap {cap}; subsampling");
        warnings.push(format!("{n} samples per side exceeds cap {cap}; both sets subsampled to {cap}"));
        x = subsample(&x, cap, seed)?;
        y = subsample(&y, cap, seed)?;
        cap
    } else {
        n
    };

    let sigma = shared_bandwidth(&x, &y, kernel, options.median_cap, seed)?;
    let value = cka_value(&x, &y, kernel, sigma)?;

    Ok(MetricResult {
        metric: MetricKind::Cka,
        value,
        extractor_id: String::new(),
        layer_id: String::new(),
        kernel: Some(*kernel),
        normalization: norm,
        n_real: n,
        n_syn: n,
        seed: Some(seed),
        bandwidth_used: sigma,
        subset: None,
        warnings,
    })
}

/// CKA for already-aligned sets of equal size and a resolved bandwidth.
pub fn cka_value(x: &FeatureMatrix, y: &FeatureMatrix, kernel: &KernelSpec, sigma: Option<f64>) -> Result<f64> {
    if x.n() != y.n() {
        return Err(Error::SampleCountMismatch(x.n(), y.n()));
    }
    let kx = gram(x, kernel, sigma)?;
    let scale_x = kx.max_abs();
    let kx = center(kx)?;
    let ky = gram(y, kernel, sigma)?;
    let scale_y = ky.max_abs();
    let ky = center(ky)?;

    let xx = hsic_centered(&kx, &kx)?;
    let yy = hsic_centered(&ky, &ky)?;
    for (name, self_hsic, scale) in [("x", xx, scale_x), ("y", yy, scale_y)] {
        let floor = (DEGENERATE_RELATIVE * scale).powi(2);
        if self_hsic <= floor {
            return Err(Error::DegenerateInput(format!(
                "HSIC({name},{name}) is zero; features are constant under this kernel"
            )));
        }
    }
    let xy = hsic_centered(&kx, &ky)?;
    let value = xy / (xx * yy).sqrt();
    if !value.is_finite() {
        return Err(Error::NumericalFailure(format!("cka evaluated to {value}")));
    }
    Ok(value)
}
