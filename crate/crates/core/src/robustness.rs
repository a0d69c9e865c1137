//! Robustness harnesses: the histogram-matching subset attack and the
//! sample-count sweep.
//!
//! The attack never touches the generator or the real set. It only chooses
//! which synthesized samples are scored, so any gap between the matched
//! ("chosen") subset and a uniform ("random") subset of the same size is a
//! property of the feature space the metric is computed in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metric::MetricConfig;
use crate::report::{MetricKind, MetricResult};
use crate::rng::{self, Xoshiro256};

/// Stream ids for [`Xoshiro256::derived`].
const STREAM_CHOSEN: u64 = 1;
const STREAM_NOISE_A: u64 = 2;
const STREAM_NOISE_B: u64 = 3;

pub const VARIATION_DEFINITION: &str = "(max - min) / |value at largest size|";

/// Default sweep sizes.
pub const DEFAULT_SWEEP_SIZES: [usize; 6] = [5_000, 10_000, 50_000, 100_000, 250_000, 500_000];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl ClassHistogram {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts.get(class).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Validates raw labels against `num_classes`.
pub fn check_labels(labels: &[i64], num_classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l < 0 || l as u64 >= num_classes as u64 {
                Err(Error::LabelOutOfRange { label: l, num_classes })
            } else {
                Ok(l as usize)
            }
        })
        .collect()
}

pub fn class_histogram(labels: &[i64], num_classes: usize) -> Result<ClassHistogram> {
    let labels = check_labels(labels, num_classes)?;
    let mut counts = vec![0u64; num_classes];
    for l in labels {
        counts[l] += 1;
    }
    Ok(ClassHistogram::from_counts(counts))
}

/// A synthesized candidate set with the predicted class of every row.
#[derive(Debug, Clone)]
pub struct LabeledPool {
    features: FeatureMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    probabilities: Option<Vec<f64>>,
}

impl LabeledPool {
    pub fn new(features: FeatureMatrix, labels: &[i64], num_classes: usize) -> Result<Self> {
        if labels.len() != features.n() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", features.n()),
                found: format!("{} labels", labels.len()),
            });
        }
        Ok(Self {
            labels: check_labels(labels, num_classes)?,
            features,
            num_classes,
            probabilities: None,
        })
    }

    /// Attaches row-major `n × num_classes` class probabilities.
    pub fn with_probabilities(mut self, probabilities: Vec<f64>) -> Result<Self> {
        let c = self.num_classes;
        if probabilities.len() != self.features.n() * c {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{c} probabilities", self.features.n()),
                found: format!("{} values", probabilities.len()),
            });
        }
        for (i, row) in probabilities.chunks_exact(c).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidMatrix(format!("probability row {i} does not sum to 1")));
            }
        }
        self.probabilities = Some(probabilities);
        Ok(self)
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        self.probabilities.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Largest-remainder apportionment of `m` seats proportional to `counts`.
/// Ties in the remainder go to the lower class id.
pub fn largest_remainder(counts: &[u64], m: usize) -> Vec<usize> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let m128 = m as u128;
    let mut quotas: Vec<usize> = counts.iter().map(|&c| (m128 * c as u128 / total) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<(u128, usize)> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| (m128 * c as u128 % total, k))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in order.iter().take(m - assigned) {
        quotas[k] += 1;
    }
    quotas
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramMatch {
    /// Selected pool rows, ascending.
    pub indices: Vec<usize>,
    /// Per-class targets.
    pub quotas: Vec<usize>,
    /// Seats that a class could not fill and were backfilled from others.
    pub shortage: usize,
}

/// Chooses `m` pool rows whose label histogram follows `target`.
///
/// Each class gets its largest-remainder quota, filled by a seeded uniform
/// draw among rows with that label. Seats a class cannot fill are drawn
/// uniformly from the rows left over.
pub fn match_histogram(pool: &LabeledPool, target: &ClassHistogram, m: usize, seed: u64) -> Result<HistogramMatch> {
    match_histogram_labels(pool.labels(), target, m, seed)
}

pub fn match_histogram_labels(
    labels: &[usize],
    target: &ClassHistogram,
    m: usize,
    seed: u64,
) -> Result<HistogramMatch> {
    if m > labels.len() {
        return Err(Error::PoolTooSmall {
            requested: m,
            pool: labels.len(),
        });
    }
    if target.total() == 0 {
        return Err(Error::Config("target histogram is empty".into()));
    }
    let quotas = largest_remainder(target.counts(), m);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); quotas.len()];
    for (i, &l) in labels.iter().enumerate() {
        if let Some(bucket) = members.get_mut(l) {
            bucket.push(i);
        }
    }

    let mut rng = Xoshiro256::derived(seed, STREAM_CHOSEN);
    let mut selected = vec![false; labels.len()];
    let mut shortage = 0;
    for (class, &quota) in quotas.iter().enumerate() {
        let take = quota.min(members[class].len());
        shortage += quota - take;
        for i in rng::choose(&members[class], take, &mut rng) {
            selected[i] = true;
        }
    }
    if shortage > 0 {
        log::info!("histogram match: {shortage} seats backfilled from other classes");
        let rest: Vec<usize> = (0..labels.len()).filter(|&i| !selected[i]).collect();
        for i in rng::choose(&rest, shortage, &mut rng) {
            selected[i] = true;
        }
    }
    let indices: Vec<usize> = (0..labels.len()).filter(|&i| selected[i]).collect();
    debug_assert_eq!(indices.len(), m);
    Ok(HistogramMatch {
        indices,
        quotas,
        shortage,
    })
}

/// The two subsets an attack compares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSelection {
    pub random: Vec<usize>,
    pub chosen: HistogramMatch,
}

/// Draws the random and the histogram-matched subsets of an `m`-row selection.
pub fn attack_selection(
    pool_labels: &[usize],
    real_labels: &[i64],
    num_classes: usize,
    m: usize,
    seed: u64,
) -> Result<AttackSelection> {
    if m > pool_labels.len() {
        return Err(Error::PoolTooSmall {
            requested: m,
            pool: pool_labels.len(),
        });
    }
    let target = class_histogram(real_labels, num_classes)?;
    Ok(AttackSelection {
        random: rng::subset_indices(pool_labels.len(), m, seed),
        chosen: match_histogram_labels(pool_labels, &target, m, seed)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub random: MetricResult,
    pub chosen: MetricResult,
    /// `chosen − random`. Negative FD or positive CKA means the matched
    /// subset scored better.
    pub gap: f64,
    pub shortage: usize,
}

/// Scores one feature space on both subsets of `selection`.
pub fn attack_cell(
    real: &FeatureMatrix,
    pool: &FeatureMatrix,
    selection: &AttackSelection,
    metric: &MetricConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    let mut random = metric.compute(real, &pool.select_rows(&selection.random)?, seed)?;
    let mut chosen = metric.compute(real, &pool.select_rows(&selection.chosen.indices)?, seed)?;
    random.subset = Some("random".into());
    chosen.subset = Some("chosen".into());
    let gap = chosen.value - random.value;
    Ok(AttackOutcome {
        random,
        chosen,
        gap,
        shortage: selection.chosen.shortage,
    })
}

pub fn attack_experiment(
    real: &FeatureMatrix,
    pool: &LabeledPool,
    real_labels: &[i64],
    m: usize,
    metric: &MetricConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    let selection = attack_selection(pool.labels(), real_labels, pool.num_classes(), m, seed)?;
    attack_cell(real, pool.features(), &selection, metric, seed)
}

/// Spread of the metric between two independent uniform subsets of the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBand {
    /// One random-vs-random difference per seed.
    pub gaps: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of `gaps`.
    pub std: f64,
}

impl NoiseBand {
    pub fn from_gaps(gaps: Vec<f64>) -> Self {
        let k = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / k;
        let var = if gaps.len() > 1 {
            gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        Self {
            gaps,
            mean,
            std: var.sqrt(),
        }
    }
}

pub fn resampling_noise(
    real: &FeatureMatrix,
    pool: &FeatureMatrix,
    m: usize,
    metric: &MetricConfig,
    seeds: &[u64],
) -> Result<NoiseBand> {
    if m > pool.n() {
        return Err(Error::PoolTooSmall {
            requested: m,
            pool: pool.n(),
        });
    }
    let mut gaps = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let a = rng::subset_indices(pool.n(), m, Xoshiro256::derived(s, STREAM_NOISE_A).next_word());
        let b = rng::subset_indices(pool.n(), m, Xoshiro256::derived(s, STREAM_NOISE_B).next_word());
        let va = metric.compute(real, &pool.select_rows(&a)?, s)?.value;
        let vb = metric.compute(real, &pool.select_rows(&b)?, s)?.value;
        gaps.push(vb - va);
    }
    Ok(NoiseBand::from_gaps(gaps))
}

/// Metric values of one feature space at increasing synthesized-sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepResult {
    pub sizes: Vec<usize>,
    pub values: BTreeMap<String, Vec<f64>>,
    pub variation: BTreeMap<String, f64>,
    pub variation_definition: String,
}

pub fn validate_sizes(sizes: &[usize], pool: usize) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::InvalidSizes("no sizes given".into()));
    }
    if let Some(w) = sizes.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSizes(format!(
            "sizes must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    if sizes[0] < 2 {
        return Err(Error::InvalidSizes("sizes must be at least 2".into()));
    }
    let largest = *sizes.last().unwrap();
    if largest > pool {
        return Err(Error::SizeExceedsPool { size: largest, pool });
    }
    Ok(())
}

/// Relative range anchored at the value for the largest size.
pub fn relative_range(values: &[f64]) -> Result<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let anchor = values.last().copied().unwrap_or(0.0).abs();
    let range = max - min;
    if range == 0.0 {
        return Ok(0.0);
    }
    if anchor == 0.0 {
        return Err(Error::NumericalFailure(
            "variation undefined: value at the largest size is zero".into(),
        ));
    }
    Ok(range / anchor)
}

/// Key for a metric config within a sweep; a second config of the same
/// metric kind is keyed by its kernel as well.
fn metric_key(metric: &MetricConfig, taken: &BTreeMap<String, Vec<f64>>) -> String {
    let base = metric.metric.name().to_string();
    if !taken.contains_key(&base) {
        return base;
    }
    match metric.metric {
        MetricKind::Cka => format!("cka:{}", metric.kernel.label()),
        MetricKind::Fd => format!("fd:{}", metric.normalization),
    }
}

pub fn sample_sweep(
    real: &FeatureMatrix,
    syn_pool: &FeatureMatrix,
    sizes: &[usize],
    metrics: &[MetricConfig],
    seed: u64,
) -> Result<SweepResult> {
    sample_sweep_detailed(real, syn_pool, sizes, metrics, seed).map(|(r, _)| r)
}

/// As [`sample_sweep`], also returning every individual result, tagged
/// `n=<size>` in [`MetricResult::subset`].
pub fn sample_sweep_detailed(
    real: &FeatureMatrix,
    syn_pool: &FeatureMatrix,
    sizes: &[usize],
    metrics: &[MetricConfig],
    seed: u64,
) -> Result<(SweepResult, Vec<MetricResult>)> {
    validate_sizes(sizes, syn_pool.n())?;
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let keys: Vec<String> = metrics
        .iter()
        .map(|m| {
            let k = metric_key(m, &values);
            values.insert(k.clone(), Vec::new());
            k
        })
        .collect();
    if keys.len() != values.len() {
        return Err(Error::Config("duplicate metric configuration in sweep".into()));
    }

    // Sizes run one after another: each cell is already internally parallel and
    // the largest Grams dominate memory. Subsets share the seed, so each size
    // contains every smaller one.
    let mut results = Vec::with_capacity(sizes.len() * metrics.len());
    for &size in sizes {
        let syn = syn_pool.subsample(size, seed)?;
        for (metric, key) in metrics.iter().zip(&keys) {
            let mut r = metric.compute(real, &syn, seed)?;
            values.get_mut(key).unwrap().push(r.value);
            r.subset = Some(format!("n={size}"));
            results.push(r);
        }
    }
    let variation = values
        .iter()
        .map(|(k, v)| relative_range(v).map(|r| (k.clone(), r)))
        .collect::<Result<_>>()?;
    let sweep = SweepResult {
        sizes: sizes.to_vec(),
        values,
        variation,
        variation_definition: VARIATION_DEFINITION.into(),
    };
    Ok((sweep, results))
}

/// Experiment block attached to a report produced by a harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    Attack(AttackBlock),
    Sweep(SweepBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParameters {
    pub m: usize,
    pub num_classes: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub noise_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPair {
    pub extractor_id: String,
    pub layer_id: String,
    pub metric: MetricKind,
    pub random: f64,
    pub chosen: f64,
    pub gap: f64,
    pub noise: Option<NoiseBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub parameters: AttackParameters,
    pub shortages: usize,
    pub quotas: Vec<usize>,
    pub pairs: Vec<AttackPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParameters {
    pub sizes: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCell {
    pub extractor_id: String,
    pub layer_id: String,
    pub result: SweepResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameters: SweepParameters,
    /// `extractor/layer/metric` → relative range.
    pub variation: BTreeMap<String, f64>,
    pub cells: Vec<SweepCell>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::NormalizationSpec;
    use proptest::prelude::*;

    fn pool_with_labels(labels: &[i64], classes: usize) -> LabeledPool {
        let n = labels.len();
        let f = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledPool::new(f, labels, classes).unwrap()
    }

    #[test]
    fn histogram_examples() {
        let h = class_histogram(&[0, 0, 1], 2).unwrap();
        assert_eq!(h.counts(), &[2, 1]);
        assert_eq!(h.total(), 3);
        let e = class_histogram(&[], 3).unwrap();
        assert_eq!(e.counts(), &[0, 0, 0]);
        assert_eq!(e.total(), 0);
        assert!(matches!(
            class_histogram(&[5], 3),
            Err(Error::LabelOutOfRange { label: 5, num_classes: 3 })
        ));
        assert!(class_histogram(&[-1], 3).is_err());
    }

    #[test]
    fn largest_remainder_oracle() {
        assert_eq!(largest_remainder(&[2, 1], 3), vec![2, 1]);
        // 10 × (1/3, 1/3, 1/3) = 3.33 each, one extra seat to class 0.
        assert_eq!(largest_remainder(&[1, 1, 1], 10), vec![4, 3, 3]);
        // 7 × (5/10, 3/10, 2/10) = 3.5, 2.1, 1.4 → 3, 2, 1 + one seat to the 0.5 remainder.
        assert_eq!(largest_remainder(&[5, 3, 2], 7), vec![4, 2, 1]);
        assert_eq!(largest_remainder(&[0, 0], 4), vec![0, 0]);
    }

    #[test]
    fn match_exact_quotas() {
        // A = 0, B = 1
        let pool = pool_with_labels(&[0, 0, 0, 1, 1], 2);
        let target = ClassHistogram::from_counts(vec![2, 1]);
        let r = match_histogram(&pool, &target, 3, 9).unwrap();
        assert_eq!(r.indices.len(), 3);
        let a = r.indices.iter().filter(|&&i| pool.labels()[i] == 0).count();
        assert_eq!((a, 3 - a), (2, 1));
        assert_eq!(r.shortage, 0);
    }

    #[test]
    fn match_full_pool() {
        let labels = [0, 1, 1, 2, 0, 2, 2];
        let pool = pool_with_labels(&labels, 3);
        let target = class_histogram(&labels, 3).unwrap();
        let r = match_histogram(&pool, &target, 7, 0).unwrap();
        assert_eq!(r.indices, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn match_with_shortage() {
        let pool = pool_with_labels(&[0, 0, 1, 1, 1], 2);
        let target = ClassHistogram::from_counts(vec![3, 0]);
        let r = match_histogram(&pool, &target, 3, 4).unwrap();
        let a = r.indices.iter().filter(|&&i| pool.labels()[i] == 0).count();
        assert_eq!(a, 2);
        assert_eq!(r.shortage, 1);
        assert_eq!(r.indices.len(), 3);
    }

    #[test]
    fn match_errors() {
        let pool = pool_with_labels(&[0, 1], 2);
        assert!(matches!(
            match_histogram(&pool, &ClassHistogram::from_counts(vec![1, 1]), 3, 0),
            Err(Error::PoolTooSmall { requested: 3, pool: 2 })
        ));
        assert!(match_histogram(&pool, &ClassHistogram::from_counts(vec![0, 0]), 1, 0).is_err());
    }

    #[test]
    fn full_pool_attack_has_zero_gap() {
        let mut rng = Xoshiro256::seed_from(1);
        let labels: Vec<i64> = (0..40).map(|i| (i % 4) as i64).collect();
        let feats: Vec<f64> = (0..40 * 3).map(|_| (rng.below(1000) as f64) / 100.0).collect();
        let pool = LabeledPool::new(FeatureMatrix::new(40, 3, feats.clone()).unwrap(), &labels, 4).unwrap();
        let real = FeatureMatrix::new(40, 3, feats.iter().rev().copied().collect()).unwrap();
        let out = attack_experiment(&real, &pool, &[0, 0, 1, 3], 40, &MetricConfig::fd(NormalizationSpec::None), 5)
            .unwrap();
        assert_eq!(out.gap, 0.0);
        assert_eq!(out.random.subset.as_deref(), Some("random"));
        assert_eq!(out.chosen.subset.as_deref(), Some("chosen"));
    }

    #[test]
    fn pool_validation() {
        let f = FeatureMatrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(LabeledPool::new(f.clone(), &[0, 1], 2).is_err());
        assert!(LabeledPool::new(f.clone(), &[0, 1, 2], 2).is_err());
        let p = LabeledPool::new(f, &[0, 1, 1], 2).unwrap();
        assert!(p.clone().with_probabilities(vec![0.5, 0.5, 0.2, 0.8, 0.0, 1.0]).is_ok());
        assert!(p.with_probabilities(vec![0.5, 0.6, 0.2, 0.8, 0.0, 1.0]).is_err());
    }

    #[test]
    fn sweep_size_validation() {
        assert!(matches!(validate_sizes(&[10, 5], 100), Err(Error::InvalidSizes(_))));
        assert!(matches!(validate_sizes(&[10, 10], 100), Err(Error::InvalidSizes(_))));
        assert!(matches!(validate_sizes(&[], 100), Err(Error::InvalidSizes(_))));
        assert!(matches!(validate_sizes(&[10, 200], 100), Err(Error::SizeExceedsPool { .. })));
        assert!(validate_sizes(&[10, 100], 100).is_ok());
    }

    #[test]
    fn single_size_sweep_has_zero_variation() {
        let mut rng = Xoshiro256::seed_from(2);
        let mk = |rng: &mut Xoshiro256, n: usize| {
            FeatureMatrix::new(n, 2, (0..n * 2).map(|_| rng.below(1000) as f64).collect()).unwrap()
        };
        let real = mk(&mut rng, 50);
        let pool = mk(&mut rng, 80);
        let metrics = [
            MetricConfig::fd(NormalizationSpec::None),
            MetricConfig::cka(crate::kernel::KernelSpec::linear(), NormalizationSpec::None),
        ];
        let r = sample_sweep(&real, &pool, &[40], &metrics, 3).unwrap();
        assert_eq!(r.variation["fd"], 0.0);
        assert_eq!(r.variation["cka"], 0.0);
        assert_eq!(r.values["fd"].len(), 1);
    }

    #[test]
    fn relative_range_examples() {
        assert_eq!(relative_range(&[1.0, 2.0, 4.0]).unwrap(), 0.75);
        assert_eq!(relative_range(&[3.0]).unwrap(), 0.0);
        assert!(relative_range(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn experiment_block_json() {
        let block = Experiment::Sweep(SweepBlock {
            parameters: SweepParameters { sizes: vec![2, 4], seed: 1 },
            variation: BTreeMap::new(),
            cells: vec![],
        });
        let text = serde_json::to_string(&block).unwrap();
        assert!(text.starts_with(r#"{"kind":"sweep""#), "{text}");
        assert_eq!(serde_json::from_str::<Experiment>(&text).unwrap(), block);
        let bad = text.replacen(r#""cells""#, r#""bogus":1,"cells""#, 1);
        assert!(serde_json::from_str::<Experiment>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn matched_indices_unique_and_in_range(
            labels in prop::collection::vec(0i64..5, 1..80),
            target in prop::collection::vec(0u64..20, 5),
            frac in 0.0f64..=1.0,
            seed: u64,
        ) {
            prop_assume!(target.iter().sum::<u64>() > 0);
            let n = labels.len();
            let m = ((n as f64) * frac) as usize;
            let labels_u: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            let target = ClassHistogram::from_counts(target);
            let r = match_histogram_labels(&labels_u, &target, m, seed).unwrap();
            prop_assert_eq!(r.indices.len(), m);
            for w in r.indices.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(r.indices.iter().all(|&i| i < n));

            let mut got = vec![0usize; 5];
            for &i in &r.indices {
                got[labels_u[i]] += 1;
            }
            let l1: usize = got.iter().zip(&r.quotas).map(|(g, q)| g.abs_diff(*q)).sum();
            prop_assert!(l1 <= 2 * r.shortage);
            if r.shortage == 0 {
                prop_assert_eq!(&got, &r.quotas);
            }
        }
    }
}
