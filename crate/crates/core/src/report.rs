//! Metric results, Overall aggregation, cross-extractor similarity and report
//! serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cka::CkaOptions;
use crate::error::{Error, Result};
use crate::features::{normalize, FeatureMatrix, NormalizationSpec};
use crate::kernel::{center, frobenius_inner, gram, median_pairwise_distance, GramMatrix, KernelKind, KernelSpec};
use crate::robustness::Experiment;
use crate::sum::sorted_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Fd,
    Cka,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Fd => "fd",
            MetricKind::Cka => "cka",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One distance or similarity value with the settings that produced it.
///
/// `n_real`/`n_syn` are the sample counts that entered the computation after
/// any subsampling. CKA values are on the `[0, 1]` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricResult {
    pub metric: MetricKind,
    pub value: f64,
    pub extractor_id: String,
    pub layer_id: String,
    pub kernel: Option<KernelSpec>,
    pub normalization: NormalizationSpec,
    pub n_real: usize,
    pub n_syn: usize,
    pub seed: Option<u64>,
    pub bandwidth_used: Option<f64>,
    /// Which subset of a pool produced the value, for experiment reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricResult {
    pub fn for_cell(mut self, extractor_id: &str, layer_id: &str) -> Self {
        self.extractor_id = extractor_id.to_string();
        self.layer_id = layer_id.to_string();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overall {
    /// Mean over extractors of each extractor's CKA score.
    pub by_extractor: Option<f64>,
    /// Per extractor, the mean CKA over its included layers.
    pub by_layer: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub model_id: String,
    pub config_digest: String,
    pub results: Vec<MetricResult>,
    pub overall: Overall,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
}

impl EvaluationReport {
    pub fn new(model_id: impl Into<String>, config_digest: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            config_digest: config_digest.into(),
            results: Vec::new(),
            overall: Overall::default(),
            experiment: None,
        }
    }
}

fn mean_sorted(values: impl IntoIterator<Item = f64>) -> Result<f64> {
    let values: Vec<f64> = values.into_iter().collect();
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    Ok(sorted_sum(values) / n)
}

/// Unweighted mean of CKA results. FD values are never averaged.
pub fn overall_score(results: &[MetricResult]) -> Result<f64> {
    if results.iter().any(|r| r.metric == MetricKind::Fd) {
        return Err(Error::MixedMetrics);
    }
    mean_sorted(results.iter().map(|r| r.value))
}

/// Overall aggregates for a set of results.
///
/// `layers`, when given for an extractor, lists the layers that enter its
/// layer average; otherwise every CKA layer of that extractor does. An
/// extractor's score is its single CKA value, or its layer average when it
/// has several. Aggregates need at least two constituents.
pub fn compute_overall(
    results: &[MetricResult],
    layers: Option<&BTreeMap<String, Vec<String>>>,
) -> Result<Overall> {
    let mut by_extractor_cells: BTreeMap<&str, Vec<MetricResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.metric == MetricKind::Cka) {
        let included = match layers.and_then(|l| l.get(&r.extractor_id)) {
            Some(list) => list.contains(&r.layer_id),
            None => true,
        };
        if included {
            by_extractor_cells.entry(&r.extractor_id).or_default().push(r.clone());
        }
    }

    let mut overall = Overall::default();
    let mut extractor_scores = Vec::new();
    for (extractor, cells) in &by_extractor_cells {
        if cells.len() >= 2 {
            let score = overall_score(cells)?;
            overall.by_layer.insert(extractor.to_string(), score);
            extractor_scores.push(score);
        } else {
            extractor_scores.push(cells[0].value);
        }
    }
    if extractor_scores.len() >= 2 {
        overall.by_extractor = Some(mean_sorted(extractor_scores)?);
    }
    Ok(overall)
}

/// Symmetric CKA matrix between extractors, indexed by `ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub ids: Vec<String>,
    /// Row-major `ids.len()²` values.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Entry for a pair of extractor ids.
    pub fn between(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }
}

/// CKA between every pair of extractors evaluated on the same probe samples.
///
/// Extractors may have different widths, so for RBF each one gets its own
/// median-heuristic bandwidth rather than a joint one.
pub fn cross_extractor_similarity(
    features: &BTreeMap<String, FeatureMatrix>,
    kernel: &KernelSpec,
    norm: NormalizationSpec,
    seed: u64,
) -> Result<SimilarityMatrix> {
    kernel.validate()?;
    if features.len() < 2 {
        return Err(Error::Config("cross-extractor similarity needs at least two extractors".into()));
    }
    let mut iter = features.values();
    let n = iter.next().map(FeatureMatrix::n).unwrap_or(0);
    if let Some(other) = iter.find(|f| f.n() != n) {
        return Err(Error::SampleCountMismatch(n, other.n()));
    }
    let cap = CkaOptions::default().median_cap;

    let grams: Vec<(GramMatrix, f64)> = features
        .values()
        .map(|f| -> Result<(GramMatrix, f64)> {
            let f = normalize(f, norm)?;
            let sigma = match (kernel.kind, kernel.bandwidth_override) {
                (KernelKind::Rbf, Some(s)) => Some(s),
                (KernelKind::Rbf, None) => {
                    let points = if f.n() > cap { f.subsample(cap, seed)? } else { f.clone() };
                    let rows: Vec<&[f64]> = points.rows().collect();
                    Some(kernel.bandwidth_fraction * median_pairwise_distance(&rows)?)
                }
                _ => None,
            };
            let g = gram(&f, kernel, sigma)?;
            let scale = g.max_abs();
            let g = center(g)?;
            let self_hsic = frobenius_inner(&g, &g)?;
            if self_hsic <= (1e-12 * scale).powi(2) * ((f.n() - 1) * (f.n() - 1)) as f64 {
                return Err(Error::DegenerateInput("constant extractor features".into()));
            }
            Ok((g, self_hsic))
        })
        .collect::<Result<_>>()?;

    let k = grams.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (gi, si) = &grams[i];
            let (gj, sj) = &grams[j];
            frobenius_inner(gi, gj).map(|xy| xy / (si * sj).sqrt())
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; k * k];
    for (&(i, j), v) in pairs.iter().zip(entries) {
        values[i * k + j] = v;
        values[j * k + i] = v;
    }
    Ok(SimilarityMatrix {
        ids: features.keys().cloned().collect(),
        values,
    })
}

/// Decimal rounding for display: binary noise below 1e-9 is dropped first,
/// then the value is rounded half away from zero.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    const NOISE_DIGITS: usize = 9;
    assert!(decimals <= NOISE_DIGITS);
    if !value.is_finite() {
        return value.to_string();
    }
    let text = format!("{:.*}", NOISE_DIGITS, value.abs());
    let (int_part, frac) = text.split_once('.').unwrap_or((&text, ""));
    let scaled: u128 = format!("{int_part}{frac}").parse().unwrap_or(0);
    let unit = 10u128.pow((NOISE_DIGITS - decimals) as u32);
    let mut q = scaled / unit;
    if scaled % unit >= unit / 2 {
        q += 1;
    }
    let sign = if value < 0.0 && q > 0 { "-" } else { "" };
    if decimals == 0 {
        return format!("{sign}{q}");
    }
    let div = 10u128.pow(decimals as u32);
    format!("{sign}{}.{:0width$}", q / div, q % div, width = decimals)
}

/// CKA as printed in tables: ×100, two decimals.
pub fn format_cka(value: f64) -> String {
    format_fixed(value * 100.0, 2)
}

pub fn format_value(metric: MetricKind, value: f64) -> String {
    match metric {
        MetricKind::Cka => format_cka(value),
        MetricKind::Fd => format_fixed(value, 2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "table" => Ok(Self::Table),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "model_id",
    "extractor_id",
    "layer_id",
    "metric",
    "value",
    "n_real",
    "n_syn",
    "kernel",
    "bandwidth",
    "normalization",
    "seed",
];

pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)?;
            text.push('\n');
            Ok(text.into_bytes())
        }
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Table => Ok(render_table(report).into_bytes()),
    }
}

pub fn parse_report(bytes: &[u8]) -> Result<EvaluationReport> {
    Ok(serde_json::from_slice(bytes)?)
}

fn render_csv(report: &EvaluationReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &report.results {
        w.write_record([
            report.model_id.clone(),
            r.extractor_id.clone(),
            r.layer_id.clone(),
            r.metric.to_string(),
            format_value(r.metric, r.value),
            r.n_real.to_string(),
            r.n_syn.to_string(),
            r.kernel.map(|k| k.label()).unwrap_or_default(),
            r.bandwidth_used.map(|b| b.to_string()).unwrap_or_default(),
            r.normalization.to_string(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

fn render_table(report: &EvaluationReport) -> String {
    let mut rows: Vec<[String; 5]> = vec![[
        "extractor".into(),
        "layer".into(),
        "metric".into(),
        "subset".into(),
        "value".into(),
    ]];
    for r in &report.results {
        rows.push([
            r.extractor_id.clone(),
            r.layer_id.clone(),
            r.metric.to_string().to_uppercase(),
            r.subset.clone().unwrap_or_else(|| "-".into()),
            format_value(r.metric, r.value),
        ]);
    }
    for (extractor, v) in &report.overall.by_layer {
        rows.push([
            extractor.clone(),
            "Overall".into(),
            "CKA".into(),
            "-".into(),
            format_cka(*v),
        ]);
    }
    if let Some(v) = report.overall.by_extractor {
        rows.push(["Overall".into(), "-".into(), "CKA".into(), "-".into(), format_cka(v)]);
    }

    let mut widths = [0usize; 5];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", report.model_id);
    let _ = writeln!(out, "config: {}", report.config_digest);
    for (k, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 4 {
                    format!("{cell:>w$}")
                } else {
                    format!("{cell:<w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if k == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
