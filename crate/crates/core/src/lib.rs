//! Distributional distances between feature sets of real and generated
//! samples: Fréchet distance over fitted Gaussians, and kernel CKA built on
//! HSIC. Around the two metrics sit feature ingestion (NPY arrays plus JSON
//! manifests), Overall aggregation and report rendering, and two robustness
//! harnesses: a histogram-matching subset attack and a sample-count sweep.

pub mod cka;
pub mod error;
pub mod features;
pub mod frechet;
pub mod kernel;
pub mod manifest;
pub mod metric;
pub mod npy;
pub mod recipe;
pub mod report;
pub mod rng;
pub mod robustness;
pub mod sum;
pub mod synthetic;

pub use cka::{cka, cka_with, hsic, CkaOptions};
pub use error::{Error, Result};
pub use features::{normalize, subsample, FeatureMatrix, NormalizationSpec};
pub use frechet::{fit_moments, frechet_distance, frechet_from_features, sqrtm_psd, GaussianMoments};
pub use kernel::{center, gram, median_heuristic, GramMatrix, KernelKind, KernelSpec};
pub use manifest::{load_features, FeatureManifest};
pub use metric::MetricConfig;
pub use recipe::{run_attack, run_evaluate, run_sweep, EvaluationRecipe, LoadedRecipe};
pub use report::{
    compute_overall, cross_extractor_similarity, overall_score, parse_report, render_report,
    EvaluationReport, MetricKind, MetricResult, ReportFormat,
};
pub use robustness::{
    attack_experiment, class_histogram, match_histogram, sample_sweep, ClassHistogram, LabeledPool,
    SweepResult,
};
