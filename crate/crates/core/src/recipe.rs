//! Declarative evaluation recipes and the runs built from them.
//!
//! A recipe names manifest files for the real and synthesized feature sets,
//! the metrics, kernel, normalization and seed. Relative paths resolve
//! against the recipe's directory. Every run is a pure function of the
//! recipe and the files it names; the report carries a digest of the recipe
//! so two reports can be matched to the configuration that produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cka::CkaOptions;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, NormalizationSpec};
use crate::kernel::KernelSpec;
use crate::manifest::{check_unique, load_features, FeatureManifest};
use crate::metric::MetricConfig;
use crate::npy;
use crate::report::{compute_overall, EvaluationReport, MetricKind, MetricResult, ReportFormat};
use crate::robustness::{
    attack_cell, attack_selection, check_labels, resampling_noise, sample_sweep_detailed,
    validate_sizes, AttackBlock, AttackPair, AttackParameters, Experiment, SweepBlock, SweepCell,
    SweepParameters, DEFAULT_SWEEP_SIZES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRef {
    pub extractor_id: String,
    pub layer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Labels of the synthesized pool; defaults to `<first syn features>.labels.npy`.
    #[serde(default)]
    pub pool_labels: Option<PathBuf>,
    pub real_labels: PathBuf,
    pub m: usize,
    pub num_classes: usize,
    /// Seeds for the random-vs-random noise band; empty skips it.
    #[serde(default)]
    pub noise_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationRecipe {
    pub model_id: String,
    /// Manifest files for the real features.
    pub real: Vec<PathBuf>,
    /// Manifest files for the synthesized features.
    pub syn: Vec<PathBuf>,
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub normalization: NormalizationSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub caps: CkaOptions,
    /// Cells to evaluate; defaults to every (extractor, layer) of `real`.
    #[serde(default)]
    pub cells: Option<Vec<CellRef>>,
    /// Per extractor, the layers averaged into its Overall score.
    #[serde(default)]
    pub overall_layers: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<ReportFormat>,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

/// A parsed recipe together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedRecipe {
    pub recipe: EvaluationRecipe,
    pub base_dir: PathBuf,
}

impl LoadedRecipe {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let recipe: EvaluationRecipe =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { recipe, base_dir })
    }

    pub fn new(recipe: EvaluationRecipe, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            recipe,
            base_dir: base_dir.into(),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }
}

impl EvaluationRecipe {
    /// SHA-256 over the canonical JSON of the recipe, leaving out where and
    /// how the report is written.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        canonical.format = None;
        // serde_json::Value maps are ordered, so this is a canonical form.
        let value = serde_json::to_value(&canonical).expect("recipe serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        let hash = Sha256::digest(&bytes);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn metric_configs(&self) -> Vec<MetricConfig> {
        self.metrics
            .iter()
            .map(|&metric| MetricConfig {
                metric,
                kernel: self.kernel,
                normalization: self.normalization,
                cka: self.caps,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::Config("metrics: at least one metric is required".into()));
        }
        if self.real.is_empty() {
            return Err(Error::Config("real: no manifests listed".into()));
        }
        if self.syn.is_empty() {
            return Err(Error::Config("syn: no manifests listed".into()));
        }
        self.kernel
            .validate()
            .map_err(|e| Error::Config(format!("kernel: {e}")))?;
        Ok(())
    }
}

/// One (extractor, layer) with its two loaded feature sets.
struct Cell {
    extractor_id: String,
    layer_id: String,
    real: FeatureMatrix,
    syn: FeatureMatrix,
    syn_manifest: FeatureManifest,
}

fn read_manifests(loaded: &LoadedRecipe, paths: &[PathBuf], field: &str) -> Result<Vec<FeatureManifest>> {
    let manifests = paths
        .iter()
        .map(|p| {
            let path = loaded.resolve(p);
            FeatureManifest::read(&path).map_err(|e| Error::Config(format!("{field}: {}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    check_unique(&manifests).map_err(|e| Error::Config(format!("{field}: {e}")))?;
    Ok(manifests)
}

fn find<'a>(manifests: &'a [FeatureManifest], extractor: &str, layer: &str) -> Option<&'a FeatureManifest> {
    manifests
        .iter()
        .find(|m| m.extractor_id == extractor && m.layer_id == layer)
}

fn load_cells(loaded: &LoadedRecipe) -> Result<Vec<Cell>> {
    let recipe = &loaded.recipe;
    recipe.validate()?;
    let real = read_manifests(loaded, &recipe.real, "real")?;
    let syn = read_manifests(loaded, &recipe.syn, "syn")?;

    let wanted: Vec<CellRef> = match &recipe.cells {
        Some(cells) => cells.clone(),
        None => real
            .iter()
            .map(|m| CellRef {
                extractor_id: m.extractor_id.clone(),
                layer_id: m.layer_id.clone(),
            })
            .collect(),
    };

    wanted
        .iter()
        .map(|c| {
            let (e, l) = (&c.extractor_id, &c.layer_id);
            let r = find(&real, e, l)
                .ok_or_else(|| Error::Config(format!("no real manifest for extractor '{e}', layer '{l}'")))?;
            let s = find(&syn, e, l)
                .ok_or_else(|| Error::Config(format!("no syn manifest for extractor '{e}', layer '{l}'")))?;
            let load = |m: &FeatureManifest| {
                load_features(m).map_err(|err| Error::Config(format!("({e}, {l}) {}: {err}", m.path.display())))
            };
            Ok(Cell {
                extractor_id: e.clone(),
                layer_id: l.clone(),
                real: load(r)?,
                syn: load(s)?,
                syn_manifest: s.clone(),
            })
        })
        .collect()
}

fn in_cell<T>(cell: &Cell, metric: MetricKind, r: Result<T>) -> Result<T> {
    r.map_err(|source| Error::Cell {
        metric: metric.name().into(),
        extractor: cell.extractor_id.clone(),
        layer: cell.layer_id.clone(),
        source: Box::new(source),
    })
}

/// Every configured metric on every cell, plus Overall aggregates.
pub fn run_evaluate(loaded: &LoadedRecipe) -> Result<EvaluationReport> {
    let recipe = &loaded.recipe;
    let cells = load_cells(loaded)?;
    let configs = recipe.metric_configs();

    let jobs: Vec<(&Cell, &MetricConfig)> = cells
        .iter()
        .flat_map(|c| configs.iter().map(move |m| (c, m)))
        .collect();
    // Collecting an indexed parallel iterator keeps recipe order.
    let results: Vec<MetricResult> = jobs
        .par_iter()
        .map(|(cell, config)| {
            in_cell(cell, config.metric, config.compute(&cell.real, &cell.syn, recipe.seed))
                .map(|r| r.for_cell(&cell.extractor_id, &cell.layer_id))
        })
        .collect::<Result<_>>()?;

    let mut report = EvaluationReport::new(&recipe.model_id, recipe.digest());
    report.overall = compute_overall(&results, recipe.overall_layers.as_ref())?;
    report.results = results;
    Ok(report)
}

/// Random vs. histogram-matched subsets of each synthesized pool.
pub fn run_attack(loaded: &LoadedRecipe) -> Result<EvaluationReport> {
    let recipe = &loaded.recipe;
    let attack = recipe
        .attack
        .as_ref()
        .ok_or_else(|| Error::Config("attack: recipe has no attack section".into()))?;
    let cells = load_cells(loaded)?;

    let pool_n = cells[0].syn.n();
    if let Some(c) = cells.iter().find(|c| c.syn.n() != pool_n) {
        return Err(Error::Config(format!(
            "syn: pool for ({}, {}) has {} rows, expected {pool_n}; pools must share rows",
            c.extractor_id,
            c.layer_id,
            c.syn.n()
        )));
    }
    if attack.m > pool_n {
        return Err(Error::Config(format!("attack.m: {} exceeds pool size {pool_n}", attack.m)));
    }
    if attack.m < 2 {
        return Err(Error::Config("attack.m: must be at least 2".into()));
    }

    let pool_labels_path = match &attack.pool_labels {
        Some(p) => loaded.resolve(p),
        None => cells[0].syn_manifest.labels_path(),
    };
    let label_err = |field: &str, e: Error| Error::Config(format!("{field}: {e}"));
    let pool_labels = npy::read_labels(&pool_labels_path).map_err(|e| label_err("attack.pool_labels", e))?;
    if pool_labels.len() != pool_n {
        return Err(Error::Config(format!(
            "attack.pool_labels: {} labels for a pool of {pool_n}",
            pool_labels.len()
        )));
    }
    let pool_labels =
        check_labels(&pool_labels, attack.num_classes).map_err(|e| label_err("attack.pool_labels", e))?;
    let real_labels =
        npy::read_labels(&loaded.resolve(&attack.real_labels)).map_err(|e| label_err("attack.real_labels", e))?;
    check_labels(&real_labels, attack.num_classes).map_err(|e| label_err("attack.real_labels", e))?;

    let selection = attack_selection(&pool_labels, &real_labels, attack.num_classes, attack.m, recipe.seed)
        .map_err(|e| label_err("attack", e))?;

    let configs = recipe.metric_configs();
    let jobs: Vec<(&Cell, &MetricConfig)> = cells
        .iter()
        .flat_map(|c| configs.iter().map(move |m| (c, m)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|(cell, config)| {
            let outcome = in_cell(
                cell,
                config.metric,
                attack_cell(&cell.real, &cell.syn, &selection, config, recipe.seed),
            )?;
            let noise = if attack.noise_seeds.is_empty() {
                None
            } else {
                Some(in_cell(
                    cell,
                    config.metric,
                    resampling_noise(&cell.real, &cell.syn, attack.m, config, &attack.noise_seeds),
                )?)
            };
            Ok((cell, outcome, noise))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = EvaluationReport::new(&recipe.model_id, recipe.digest());
    let mut pairs = Vec::new();
    for (cell, outcome, noise) in outcomes {
        pairs.push(AttackPair {
            extractor_id: cell.extractor_id.clone(),
            layer_id: cell.layer_id.clone(),
            metric: outcome.random.metric,
            random: outcome.random.value,
            chosen: outcome.chosen.value,
            gap: outcome.gap,
            noise,
        });
        report
            .results
            .push(outcome.random.for_cell(&cell.extractor_id, &cell.layer_id));
        report
            .results
            .push(outcome.chosen.for_cell(&cell.extractor_id, &cell.layer_id));
    }
    report.experiment = Some(Experiment::Attack(AttackBlock {
        parameters: AttackParameters {
            m: attack.m,
            num_classes: attack.num_classes,
            pool_size: pool_n,
            seed: recipe.seed,
            noise_seeds: attack.noise_seeds.clone(),
        },
        shortages: selection.chosen.shortage,
        quotas: selection.chosen.quotas.clone(),
        pairs,
    }));
    Ok(report)
}

/// Metric stability over increasing synthesized-sample counts.
pub fn run_sweep(loaded: &LoadedRecipe) -> Result<EvaluationReport> {
    let recipe = &loaded.recipe;
    let sizes: Vec<usize> = recipe
        .sweep
        .as_ref()
        .and_then(|s| s.sizes.clone())
        .unwrap_or_else(|| DEFAULT_SWEEP_SIZES.to_vec());
    let cells = load_cells(loaded)?;
    for c in &cells {
        validate_sizes(&sizes, c.syn.n()).map_err(|e| {
            Error::Config(format!("sweep.sizes: ({}, {}): {e}", c.extractor_id, c.layer_id))
        })?;
    }

    let configs = recipe.metric_configs();
    let mut report = EvaluationReport::new(&recipe.model_id, recipe.digest());
    let mut block = SweepBlock {
        parameters: SweepParameters {
            sizes: sizes.clone(),
            seed: recipe.seed,
        },
        variation: BTreeMap::new(),
        cells: Vec::new(),
    };
    for cell in &cells {
        let metric = configs[0].metric;
        let (result, results) = in_cell(
            cell,
            metric,
            sample_sweep_detailed(&cell.real, &cell.syn, &sizes, &configs, recipe.seed),
        )?;
        for (key, v) in &result.variation {
            block
                .variation
                .insert(format!("{}/{}/{key}", cell.extractor_id, cell.layer_id), *v);
        }
        report.results.extend(
            results
                .into_iter()
                .map(|r| r.for_cell(&cell.extractor_id, &cell.layer_id)),
        );
        block.cells.push(SweepCell {
            extractor_id: cell.extractor_id.clone(),
            layer_id: cell.layer_id.clone(),
            result,
        });
    }
    report.experiment = Some(Experiment::Sweep(block));
    Ok(report)
}
