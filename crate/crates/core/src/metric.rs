use serde::{Deserialize, Serialize};

use crate::cka::{cka_with, CkaOptions};
use crate::error::Result;
use crate::features::{FeatureMatrix, NormalizationSpec};
use crate::frechet::frechet_from_features;
use crate::kernel::KernelSpec;
use crate::report::{MetricKind, MetricResult};

/// Everything needed to compute one metric between a real and a synthesized set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub metric: MetricKind,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub normalization: NormalizationSpec,
    #[serde(default)]
    pub cka: CkaOptions,
}

impl MetricConfig {
    pub fn fd(normalization: NormalizationSpec) -> Self {
        Self {
            metric: MetricKind::Fd,
            kernel: KernelSpec::default(),
            normalization,
            cka: CkaOptions::default(),
        }
    }

    pub fn cka(kernel: KernelSpec, normalization: NormalizationSpec) -> Self {
        Self {
            metric: MetricKind::Cka,
            kernel,
            normalization,
            cka: CkaOptions::default(),
        }
    }

    pub fn compute(&self, real: &FeatureMatrix, syn: &FeatureMatrix, seed: u64) -> Result<MetricResult> {
        match self.metric {
            MetricKind::Fd => frechet_from_features(real, syn, self.normalization),
            MetricKind::Cka => cka_with(real, syn, &self.kernel, self.normalization, seed, &self.cka),
        }
    }
}
