//! Kernels, Gram matrices, double centering and the median-heuristic bandwidth.
//!
//! Gram matrices are stored as the packed upper triangle (row `i` holds columns
//! `i..n`), which halves memory for the large-`n` RBF path. Every entry is
//! computed by the same scalar routine from rows `i` and `j` alone, so the
//! block size and thread count cannot change any value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;
use crate::sum::pairwise_sum;

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Default number of points used for the median heuristic.
pub const DEFAULT_MEDIAN_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Polynomial,
    Rbf,
}

/// Kernel family and parameters. Fields not used by `kind` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_coef")]
    pub coef: f64,
    /// σ = fraction × median pairwise distance.
    #[serde(default = "default_fraction")]
    pub bandwidth_fraction: f64,
    /// Fixed σ; takes precedence over the median heuristic.
    #[serde(default)]
    pub bandwidth_override: Option<f64>,
}

fn default_degree() -> u32 {
    3
}

fn default_coef() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            degree: default_degree(),
            coef: default_coef(),
            bandwidth_fraction: default_fraction(),
            bandwidth_override: None,
        }
    }

    pub fn polynomial(degree: u32, coef: f64) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            degree,
            coef,
            ..Self::linear()
        }
    }

    pub fn rbf(bandwidth_fraction: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth_fraction,
            ..Self::linear()
        }
    }

    pub fn rbf_fixed(sigma: f64) -> Self {
        Self {
            bandwidth_override: Some(sigma),
            ..Self::rbf(1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Linear => Ok(()),
            KernelKind::Polynomial if self.degree < 1 => {
                Err(Error::InvalidKernel("polynomial degree must be at least 1".into()))
            }
            KernelKind::Polynomial if !self.coef.is_finite() => {
                Err(Error::InvalidKernel("polynomial coef must be finite".into()))
            }
            KernelKind::Polynomial => Ok(()),
            KernelKind::Rbf => {
                if !(self.bandwidth_fraction > 0.0 && self.bandwidth_fraction.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "bandwidth_fraction must be positive, got {}",
                        self.bandwidth_fraction
                    )));
                }
                match self.bandwidth_override {
                    Some(s) if !(s > 0.0 && s.is_finite()) => Err(Error::InvalidKernel(format!(
                        "bandwidth_override must be positive, got {s}"
                    ))),
                    _ => Ok(()),
                }
            }
        }
    }

    /// Short human-readable form used in csv and table output.
    pub fn label(&self) -> String {
        match self.kind {
            KernelKind::Linear => "linear".into(),
            KernelKind::Polynomial => format!("poly(degree={},coef={})", self.degree, self.coef),
            KernelKind::Rbf => match self.bandwidth_override {
                Some(s) => format!("rbf(sigma={s})"),
                None => format!("rbf(fraction={})", self.bandwidth_fraction),
            },
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf(1.0)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let d0 = x[0] - y[0];
        let d1 = x[1] - y[1];
        let d2 = x[2] - y[2];
        let d3 = x[3] - y[3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// A kernel with every parameter resolved, ready to evaluate.
#[derive(Debug, Clone, Copy)]
enum Evaluator {
    Linear,
    Polynomial { degree: i32, coef: f64 },
    Rbf { inv_two_sigma_sq: f64 },
}

impl Evaluator {
    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Evaluator::Linear => dot(a, b),
            Evaluator::Polynomial { degree, coef } => (dot(a, b) + coef).powi(degree),
            Evaluator::Rbf { inv_two_sigma_sq } => (-squared_distance(a, b) * inv_two_sigma_sq).exp(),
        }
    }
}

/// Symmetric `n × n` kernel matrix in packed upper-triangular storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    packed: Vec<f64>,
    centered: bool,
}

#[inline]
fn row_offset(n: usize, i: usize) -> usize {
    i * (2 * n - i + 1) / 2
}

/// Splits packed storage into one mutable slice per block of `block` rows.
fn row_blocks(n: usize, packed: &mut [f64], block: usize) -> Vec<(usize, usize, &mut [f64])> {
    let mut out = Vec::with_capacity(n.div_ceil(block));
    let mut rest = packed;
    let mut r0 = 0;
    while r0 < n {
        let r1 = (r0 + block).min(n);
        let len = row_offset(n, r1) - row_offset(n, r0);
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(len);
        out.push((r0, r1, head));
        rest = tail;
        r0 = r1;
    }
    out
}

impl GramMatrix {
    /// Builds from a dense row-major matrix, checking symmetry.
    pub fn from_dense(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                found: format!("{} values", values.len()),
            });
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if (a - b).abs() > 1e-10 * scale {
                    return Err(Error::NotSymmetric((a - b).abs()));
                }
                packed.push(a);
            }
        }
        Ok(Self {
            n,
            packed,
            centered: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.packed[row_offset(self.n, i) + (j - i)]
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.packed.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Writes row `i` in full into `buf`.
    fn gather_row(&self, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        for j in 0..i {
            buf.push(self.packed[row_offset(self.n, j) + (i - j)]);
        }
        let start = row_offset(self.n, i);
        buf.extend_from_slice(&self.packed[start..start + (self.n - i)]);
    }

    /// Row means, each a pairwise sum over the full row in column order.
    pub fn row_means(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map_init(
                || Vec::with_capacity(n),
                |buf, i| {
                    self.gather_row(i, buf);
                    pairwise_sum(buf) / n as f64
                },
            )
            .collect()
    }
}

/// Evaluates `kernel` over all row pairs of `z`.
///
/// For RBF, σ is `kernel.bandwidth_override` when set, otherwise
/// `shared_sigma`; a CKA caller passes one σ for both feature sets.
pub fn gram(z: &FeatureMatrix, kernel: &KernelSpec, shared_sigma: Option<f64>) -> Result<GramMatrix> {
    gram_blocked(z, kernel, shared_sigma, DEFAULT_BLOCK_SIZE)
}

pub fn gram_blocked(
    z: &FeatureMatrix,
    kernel: &KernelSpec,
    shared_sigma: Option<f64>,
    block: usize,
) -> Result<GramMatrix> {
    kernel.validate()?;
    let evaluator = match kernel.kind {
        KernelKind::Linear => Evaluator::Linear,
        KernelKind::Polynomial => Evaluator::Polynomial {
            degree: kernel.degree as i32,
            coef: kernel.coef,
        },
        KernelKind::Rbf => {
            let sigma = kernel
                .bandwidth_override
                .or(shared_sigma)
                .ok_or(Error::MissingBandwidth)?;
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidKernel(format!("bandwidth must be positive, got {sigma}")));
            }
            Evaluator::Rbf {
                inv_two_sigma_sq: 1.0 / (2.0 * sigma * sigma),
            }
        }
    };

    let n = z.n();
    let block = block.max(1);
    let mut packed = vec![0.0; n * (n + 1) / 2];
    row_blocks(n, &mut packed, block)
        .into_par_iter()
        .for_each(|(r0, r1, out)| {
            let base = row_offset(n, r0);
            // Column tiles keep a block of rows hot in cache.
            let mut c0 = r0;
            while c0 < n {
                let c1 = (c0 + block).min(n);
                for i in r0..r1 {
                    let zi = z.row(i);
                    let start = row_offset(n, i) - base;
                    for j in c0.max(i)..c1 {
                        out[start + (j - i)] = evaluator.eval(zi, z.row(j));
                    }
                }
                c0 = c1;
            }
        });

    Ok(GramMatrix {
        n,
        packed,
        centered: false,
    })
}

/// Double centering `H K H` as `K − row_means − col_means + grand_mean`,
/// without forming `H`.
pub fn center(mut g: GramMatrix) -> Result<GramMatrix> {
    if g.centered {
        return Err(Error::AlreadyCentered);
    }
    let n = g.n;
    let means = g.row_means();
    let grand = pairwise_sum(&means) / n as f64;
    row_blocks(n, &mut g.packed, DEFAULT_BLOCK_SIZE)
        .into_par_iter()
        .for_each(|(r0, r1, out)| {
            let base = row_offset(n, r0);
            for i in r0..r1 {
                let start = row_offset(n, i) - base;
                for j in i..n {
                    let v = &mut out[start + (j - i)];
                    *v = *v - means[i] - means[j] + grand;
                }
            }
        });
    g.centered = true;
    Ok(g)
}

/// `Σ_ij A_ij B_ij` for symmetric matrices (equal to `Tr(A B)`), with a fixed
/// summation order.
pub fn frobenius_inner(a: &GramMatrix, b: &GramMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::SizeMismatch(a.n, b.n));
    }
    let n = a.n;
    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, i| {
                let start = row_offset(n, i);
                let len = n - i;
                let (ra, rb) = (&a.packed[start..start + len], &b.packed[start..start + len]);
                buf.clear();
                buf.extend(ra[1..].iter().zip(&rb[1..]).map(|(x, y)| x * y));
                ra[0] * rb[0] + 2.0 * pairwise_sum(buf)
            },
        )
        .collect();
    Ok(pairwise_sum(&per_row))
}

/// Median of pairwise Euclidean distances over the rows of `x` and `y`
/// together, self-pairs excluded. Above `cap` points a seeded subset of `cap`
/// points is used. An even number of distances averages the middle two.
pub fn median_heuristic(x: &FeatureMatrix, y: &FeatureMatrix, cap: usize, seed: u64) -> Result<f64> {
    if x.d() != y.d() {
        return Err(Error::DimensionMismatch(x.d(), y.d()));
    }
    let total = x.n() + y.n();
    let row = |k: usize| if k < x.n() { x.row(k) } else { y.row(k - x.n()) };
    let points: Vec<usize> = if total > cap {
        if cap < 2 {
            return Err(Error::Config(format!("median cap must be at least 2, got {cap}")));
        }
        rng::subset_indices(total, cap, seed)
    } else {
        (0..total).collect()
    };

    let rows: Vec<&[f64]> = points.iter().map(|&k| row(k)).collect();
    median_pairwise_distance(&rows)
}

/// Median Euclidean distance over all unordered pairs of distinct positions.
pub fn median_pairwise_distance(rows: &[&[f64]]) -> Result<f64> {
    let m = rows.len();
    if m < 2 {
        return Err(Error::InsufficientSamples(m));
    }
    let mut dists: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|a| ((a + 1)..m).map(move |b| squared_distance(rows[a], rows[b]).sqrt()))
        .collect();

    let count = dists.len();
    let k = count / 2;
    let (left, upper, _) = dists.select_nth_unstable_by(k, f64::total_cmp);
    let upper = *upper;
    let median = if count % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median <= 0.0 {
        return Err(Error::ZeroMedian);
    }
    Ok(median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = Xoshiro256::seed_from(seed);
        FeatureMatrix::new(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn column(vals: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn linear_outer_product() {
        let g = gram(&column(&[1.0, -1.0]), &KernelSpec::linear(), None).unwrap();
        assert_eq!(g.to_dense(), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn polynomial_matches_direct() {
        let z = random(7, 3, 1);
        let k = KernelSpec::polynomial(2, 0.5);
        let g = gram(&z, &k, None).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
                assert!((g.get(i, j) - (d + 0.5).powi(2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rbf_diagonal_is_exactly_one() {
        let z = random(20, 5, 2);
        let g = gram(&z, &KernelSpec::rbf(1.0), Some(0.7)).unwrap();
        for i in 0..20 {
            assert_eq!(g.get(i, i), 1.0);
        }
    }

    #[test]
    fn rbf_huge_bandwidth_is_all_ones() {
        let z = random(10, 4, 3);
        let max_dist = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .map(|(i, j)| squared_distance(z.row(i), z.row(j)).sqrt())
            .fold(0.0, f64::max);
        let g = gram(&z, &KernelSpec::rbf_fixed(1e9 * max_dist), None).unwrap();
        assert!(g.to_dense().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rbf_without_bandwidth() {
        let z = random(4, 2, 4);
        assert!(matches!(gram(&z, &KernelSpec::rbf(1.0), None), Err(Error::MissingBandwidth)));
    }

    #[test]
    fn override_wins_over_shared() {
        let z = random(6, 2, 5);
        let a = gram(&z, &KernelSpec::rbf_fixed(2.0), Some(0.1)).unwrap();
        let b = gram(&z, &KernelSpec::rbf(1.0), Some(2.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn block_size_does_not_change_bits() {
        let z = random(67, 9, 6);
        for k in [KernelSpec::linear(), KernelSpec::polynomial(3, 1.0), KernelSpec::rbf(1.0)] {
            let reference = gram_blocked(&z, &k, Some(1.3), 67).unwrap();
            for block in [1, 2, 5, 16, 64, 100] {
                assert_eq!(gram_blocked(&z, &k, Some(1.3), block).unwrap(), reference);
            }
        }
    }

    #[test]
    fn center_examples() {
        let c = center(GramMatrix::from_dense(3, &[2.5; 9]).unwrap()).unwrap();
        assert!(c.to_dense().iter().all(|v| v.abs() < 1e-15));

        let g = GramMatrix::from_dense(2, &[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(center(g).unwrap().to_dense(), vec![1.0, -1.0, -1.0, 1.0]);

        let g = GramMatrix::from_dense(2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(center(g).unwrap().to_dense(), vec![0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn center_twice_is_an_error() {
        let g = center(GramMatrix::from_dense(2, &[1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(center(g), Err(Error::AlreadyCentered)));
    }

    #[test]
    fn centered_rows_sum_to_zero() {
        let z = random(30, 4, 7);
        let g = center(gram(&z, &KernelSpec::rbf(1.0), Some(1.0)).unwrap()).unwrap();
        let bound = 1e-8 * 30.0 * g.max_abs();
        for i in 0..30 {
            let s: f64 = (0..30).map(|j| g.get(i, j)).sum();
            assert!(s.abs() <= bound);
        }
    }

    #[test]
    fn center_matches_explicit_h() {
        let n = 9;
        let z = random(n, 3, 8);
        let g = gram(&z, &KernelSpec::polynomial(2, 1.0), None).unwrap();
        let k = g.to_dense();
        let h = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64;
        let c = center(g).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        v += h(i, a) * k[a * n + b] * h(b, j);
                    }
                }
                assert!((c.get(i, j) - v).abs() < 1e-10 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn median_examples() {
        let pts: [&[f64]; 3] = [&[0.0], &[1.0], &[3.0]];
        assert_eq!(median_pairwise_distance(&pts).unwrap(), 2.0);

        // {p, p, q}: distances {0, d, d}.
        let (p, q): (&[f64], &[f64]) = (&[1.0, 1.0], &[4.0, 5.0]);
        assert_eq!(median_pairwise_distance(&[p, p, q]).unwrap(), 5.0);

        // {0, 1} ∪ {3, 3}: distances {0, 1, 2, 2, 3, 3}, even count.
        let x = column(&[0.0, 1.0]);
        let y = column(&[3.0, 3.0]);
        assert_eq!(median_heuristic(&x, &y, 4096, 0).unwrap(), 2.0);
    }

    #[test]
    fn median_all_identical() {
        let p = FeatureMatrix::new(3, 2, vec![1.0; 6]).unwrap();
        assert!(matches!(median_heuristic(&p, &p, 4096, 0), Err(Error::ZeroMedian)));
    }

    #[test]
    fn median_cap_is_seeded() {
        let x = random(300, 4, 9);
        let y = random(300, 4, 10);
        let a = median_heuristic(&x, &y, 100, 5).unwrap();
        assert_eq!(a, median_heuristic(&x, &y, 100, 5).unwrap());
        let full = median_heuristic(&x, &y, 4096, 5).unwrap();
        assert!((a - full).abs() / full < 0.1);
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(KernelSpec::rbf(0.0).validate().is_err());
        assert!(KernelSpec::rbf_fixed(-1.0).validate().is_err());
        assert!(KernelSpec::polynomial(0, 1.0).validate().is_err());
        assert!(KernelSpec::linear().validate().is_ok());
        let json = r#"{"kind":"rbf","bandwidth_fraction":0.5}"#;
        let k: KernelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(k, KernelSpec::rbf(0.5));
        assert!(serde_json::from_str::<KernelSpec>(r#"{"kind":"rbf","sigma":1}"#).is_err());
    }
}
