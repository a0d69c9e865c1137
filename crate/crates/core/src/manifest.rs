//! JSON manifests describing feature array files, and loading through them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::npy::{self, Dtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageDtype {
    Float32,
    Float64,
}

impl StorageDtype {
    fn matches(self, dtype: Dtype) -> bool {
        matches!(
            (self, dtype),
            (StorageDtype::Float32, Dtype::F32) | (StorageDtype::Float64, Dtype::F64)
        )
    }
}

/// One (dataset, extractor, layer) feature file.
///
/// A relative `path` is resolved against the directory holding the manifest
/// when the manifest is read with [`FeatureManifest::read`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureManifest {
    pub dataset_id: String,
    pub extractor_id: String,
    pub layer_id: String,
    pub n: usize,
    pub d: usize,
    pub dtype: StorageDtype,
    pub path: PathBuf,
    #[serde(default)]
    pub source_seed: Option<u64>,
}

impl FeatureManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: FeatureManifest = serde_json::from_str(&text)?;
        if manifest.path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.path = dir.join(&manifest.path);
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn key(&self) -> (&str, &str, &str) {
        (&self.dataset_id, &self.extractor_id, &self.layer_id)
    }

    /// Conventional location of the class-label array paired with this file.
    pub fn labels_path(&self) -> PathBuf {
        labels_path_for(&self.path)
    }
}

/// `pool.npy` → `pool.labels.npy`.
pub fn labels_path_for(features: &Path) -> PathBuf {
    let stem = features
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    features.with_file_name(format!("{stem}.labels.npy"))
}

/// Fails if two manifests share a (dataset, extractor, layer) triple.
pub fn check_unique<'a>(manifests: impl IntoIterator<Item = &'a FeatureManifest>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for m in manifests {
        if !seen.insert(m.key()) {
            return Err(Error::Config(format!(
                "duplicate manifest for dataset '{}', extractor '{}', layer '{}'",
                m.dataset_id, m.extractor_id, m.layer_id
            )));
        }
    }
    Ok(())
}

pub fn load_features(manifest: &FeatureManifest) -> Result<FeatureMatrix> {
    let header = npy::read_header(&manifest.path)?;
    let header_matches = header.shape == [manifest.n, manifest.d]
        && manifest.dtype.matches(header.dtype)
        && !header.fortran_order;
    if !header_matches {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} {:?}", manifest.n, manifest.d, manifest.dtype),
            found: format!("{:?} {}", header.shape, header.dtype.descr()),
        });
    }
    let (_, values) = npy::read_matrix(&manifest.path)?;
    FeatureMatrix::new(manifest.n, manifest.d, values)
}

/// Writes `x` as float64 and returns a manifest pointing at it.
pub fn save_features(
    x: &FeatureMatrix,
    path: &Path,
    dataset_id: &str,
    extractor_id: &str,
    layer_id: &str,
) -> Result<FeatureManifest> {
    npy::write_matrix_f64(path, x.n(), x.d(), x.as_slice())?;
    Ok(FeatureManifest {
        dataset_id: dataset_id.into(),
        extractor_id: extractor_id.into(),
        layer_id: layer_id.into(),
        n: x.n(),
        d: x.d(),
        dtype: StorageDtype::Float64,
        path: path.to_path_buf(),
        source_seed: None,
    })
}
