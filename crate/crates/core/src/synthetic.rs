//! Seeded synthetic feature sets with known structure.

use rand_distr::{Distribution, StandardNormal};

use crate::features::FeatureMatrix;
use crate::rng::{self, Xoshiro256};

/// `n` rows from `N(mean, I)`.
pub fn gaussian_with_mean(n: usize, mean: &[f64], seed: u64) -> FeatureMatrix {
    let mut rng = Xoshiro256::seed_from(seed);
    let d = mean.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &mu in mean {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + z);
        }
    }
    FeatureMatrix::new(n, d, data).expect("valid gaussian sample")
}

/// `n` rows from `N(shift · 1, I_d)`.
pub fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> FeatureMatrix {
    gaussian_with_mean(n, &vec![shift; d], seed)
}

/// A labelled mixture where every class has its own mean.
///
/// The real set draws classes uniformly. The synthesized pool draws class `c`
/// with probability proportional to `1 / (c + 1)`, so a uniform subset of the
/// pool is skewed towards low class ids while a histogram-matched subset is
/// not.
#[derive(Debug, Clone)]
pub struct ClassConditional {
    pub num_classes: usize,
    pub real: FeatureMatrix,
    pub real_labels: Vec<i64>,
    pub pool: FeatureMatrix,
    pub pool_labels: Vec<i64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassConditionalParams {
    pub num_classes: usize,
    pub d: usize,
    pub n_real: usize,
    pub n_pool: usize,
    /// Scale of the per-class mean vectors.
    pub separation: f64,
}

impl Default for ClassConditionalParams {
    fn default() -> Self {
        Self {
            num_classes: 10,
            d: 16,
            n_real: 2000,
            n_pool: 4000,
            separation: 2.0,
        }
    }
}

fn draw_classes(n: usize, weights: &[f64], rng: &mut Xoshiro256) -> Vec<i64> {
    let total: f64 = weights.iter().sum();
    // Exact per-class counts from largest remainder, then shuffled.
    let scaled: Vec<u64> = weights.iter().map(|w| (w / total * 1e9) as u64).collect();
    let counts = crate::robustness::largest_remainder(&scaled, n);
    let mut labels: Vec<i64> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c as i64, k))
        .collect();
    let len = labels.len();
    labels = rng::choose(&labels, len, rng);
    labels
}

fn sample_classes(labels: &[i64], means: &[Vec<f64>], rng: &mut Xoshiro256) -> FeatureMatrix {
    let d = means[0].len();
    let mut data = Vec::with_capacity(labels.len() * d);
    for &l in labels {
        for &mu in &means[l as usize] {
            let z: f64 = StandardNormal.sample(&mut *rng);
            data.push(mu + z);
        }
    }
    FeatureMatrix::new(labels.len(), d, data).expect("valid mixture sample")
}

pub fn class_conditional(params: ClassConditionalParams, seed: u64) -> ClassConditional {
    let mut rng = Xoshiro256::seed_from(seed);
    let c = params.num_classes;
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..params.d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    params.separation * z
                })
                .collect()
        })
        .collect();

    let uniform = vec![1.0; c];
    let skewed: Vec<f64> = (0..c).map(|k| 1.0 / (k + 1) as f64).collect();
    let real_labels = draw_classes(params.n_real, &uniform, &mut rng);
    let pool_labels = draw_classes(params.n_pool, &skewed, &mut rng);
    let real = sample_classes(&real_labels, &means, &mut rng);
    let pool = sample_classes(&pool_labels, &means, &mut rng);
    ClassConditional {
        num_classes: c,
        real,
        real_labels,
        pool,
        pool_labels,
    }
}

/// A seeded permutation of `labels`, breaking any link to the features.
pub fn shuffled(labels: &[i64], seed: u64) -> Vec<i64> {
    let mut rng = Xoshiro256::seed_from(seed);
    rng::choose(labels, labels.len(), &mut rng)
}
