//! Feature matrices and the row-wise transforms applied before any metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// `n × d` feature activations, row-major, all finite.
///
/// There are no mutating methods; every transform returns a new matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientSamples(n));
        }
        if d < 1 {
            return Err(Error::InvalidMatrix("feature dimension must be at least 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{d} = {} values", n * d),
                found: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: format!("{d} columns"),
                    found: format!("{} columns in row {i}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }

    /// Same values with `f` applied to every row.
    pub fn map_rows(&self, mut f: impl FnMut(&mut [f64])) -> Result<Self> {
        let mut data = self.data.clone();
        for r in data.chunks_exact_mut(self.d) {
            f(r);
        }
        Self::new(self.n, self.d, data)
    }

    pub fn normalize(&self, spec: NormalizationSpec) -> Result<Self> {
        normalize(self, spec)
    }

    pub fn subsample(&self, m: usize, seed: u64) -> Result<Self> {
        subsample(self, m, seed)
    }
}

/// Row normalization applied to features before a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "NormalizationRepr", into = "NormalizationRepr")]
pub enum NormalizationSpec {
    #[default]
    None,
    Softmax,
    L1,
    L2,
}

impl NormalizationSpec {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationSpec::None => "none",
            NormalizationSpec::Softmax => "softmax",
            NormalizationSpec::L1 => "l1",
            NormalizationSpec::L2 => "l2",
        }
    }
}

// Serialized as `{"kind": "<name>"}`. Internally tagged unit variants ignore
// `deny_unknown_fields`, so the object shape goes through this struct.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizationRepr {
    kind: String,
}

impl TryFrom<NormalizationRepr> for NormalizationSpec {
    type Error = Error;

    fn try_from(r: NormalizationRepr) -> Result<Self> {
        r.kind.parse()
    }
}

impl From<NormalizationSpec> for NormalizationRepr {
    fn from(n: NormalizationSpec) -> Self {
        Self { kind: n.name().into() }
    }
}

impl std::fmt::Display for NormalizationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NormalizationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "softmax" => Ok(Self::Softmax),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

fn softmax_row(r: &mut [f64]) {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in r.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in r.iter_mut() {
        *v /= sum;
    }
}

/// Euclidean norm, rescaled so that squaring cannot overflow.
fn l2_norm(r: &[f64]) -> f64 {
    let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let ss: f64 = r.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * ss.sqrt()
}

pub fn normalize(x: &FeatureMatrix, spec: NormalizationSpec) -> Result<FeatureMatrix> {
    match spec {
        NormalizationSpec::None => Ok(x.clone()),
        NormalizationSpec::Softmax => x.map_rows(softmax_row),
        NormalizationSpec::L1 | NormalizationSpec::L2 => {
            let mut data = x.as_slice().to_vec();
            for (i, r) in data.chunks_exact_mut(x.d()).enumerate() {
                let norm = match spec {
                    NormalizationSpec::L1 => r.iter().map(|v| v.abs()).sum(),
                    _ => l2_norm(r),
                };
                if norm == 0.0 {
                    return Err(Error::DegenerateRow {
                        row: i,
                        kind: spec.name(),
                    });
                }
                r.iter_mut().for_each(|v| *v /= norm);
            }
            FeatureMatrix::new(x.n(), x.d(), data)
        }
    }
}

/// `m` rows drawn uniformly without replacement, kept in their original order.
///
/// The selection is [`rng::subset_indices`], so it is a pure function of
/// `(n, m, seed)`.
pub fn subsample(x: &FeatureMatrix, m: usize, seed: u64) -> Result<FeatureMatrix> {
    if m < 2 || m > x.n() {
        return Err(Error::SampleCountOutOfRange {
            requested: m,
            min: 2,
            max: x.n(),
        });
    }
    if m == x.n() {
        return Ok(x.clone());
    }
    x.select_rows(&rng::subset_indices(x.n(), m, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_non_finite_with_row() {
        let mut data = vec![0.0; 20];
        data[15] = f64::NAN;
        match FeatureMatrix::new(10, 2, data) {
            Err(Error::NonFiniteValue { row, col }) => assert_eq!((row, col), (7, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_single_row() {
        assert!(matches!(
            FeatureMatrix::new(1, 2, vec![0.0, 1.0]),
            Err(Error::InsufficientSamples(1))
        ));
    }

    #[test]
    fn softmax_examples() {
        let x = m(&[&[0.0, 0.0], &[0.0, 3f64.ln()]]);
        let y = normalize(&x, NormalizationSpec::Softmax).unwrap();
        assert_eq!(y.row(0), &[0.5, 0.5]);
        assert!((y.row(1)[0] - 0.25).abs() < 1e-15);
        assert!((y.row(1)[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_handles_large_inputs() {
        let x = m(&[&[1000.0, 1000.0], &[-1000.0, 0.0]]);
        let y = normalize(&x, NormalizationSpec::Softmax).unwrap();
        assert_eq!(y.row(0), &[0.5, 0.5]);
        assert!(y.row(1)[0] >= 0.0 && (y.row(1)[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_row_softmax_is_uniform() {
        let x = m(&[&[0.0, 0.0, 0.0, 0.0], &[1.0, 2.0, 3.0, 4.0]]);
        let y = normalize(&x, NormalizationSpec::Softmax).unwrap();
        assert_eq!(y.row(0), &[0.25; 4]);
    }

    #[test]
    fn l2_example() {
        let x = m(&[&[3.0, 4.0], &[1.0, 0.0]]);
        let y = normalize(&x, NormalizationSpec::L2).unwrap();
        assert!((y.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((y.row(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l1_l2_reject_zero_rows() {
        let x = m(&[&[1.0, 1.0], &[0.0, 0.0]]);
        for spec in [NormalizationSpec::L1, NormalizationSpec::L2] {
            assert!(matches!(
                normalize(&x, spec),
                Err(Error::DegenerateRow { row: 1, .. })
            ));
        }
    }

    #[test]
    fn none_is_identity() {
        let x = m(&[&[3.0, -4.0], &[1e-300, 7.0]]);
        assert_eq!(normalize(&x, NormalizationSpec::None).unwrap(), x);
    }

    #[test]
    fn subsample_bounds() {
        let x = m(&[&[1.0], &[2.0], &[3.0], &[4.0], &[5.0]]);
        assert!(subsample(&x, 1, 0).is_err());
        assert!(subsample(&x, 6, 0).is_err());
        assert_eq!(subsample(&x, 5, 0).unwrap(), x);
        let a = subsample(&x, 2, 77).unwrap();
        let b = subsample(&x, 2, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_seeds_differ() {
        let data: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let x = FeatureMatrix::new(10_000, 1, data).unwrap();
        let a = subsample(&x, 5000, 1).unwrap();
        let b = subsample(&x, 5000, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn normalization_serde() {
        let s = serde_json::to_string(&NormalizationSpec::Softmax).unwrap();
        assert_eq!(s, r#"{"kind":"softmax"}"#);
        assert!(serde_json::from_str::<NormalizationSpec>(r#"{"kind":"l3"}"#).is_err());
        assert!(serde_json::from_str::<NormalizationSpec>(r#"{"kind":"l1","x":1}"#).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = FeatureMatrix> {
        (2usize..8, 1usize..6).prop_flat_map(|(n, d)| {
            prop::collection::vec(-50.0f64..50.0, n * d)
                .prop_map(move |v| FeatureMatrix::new(n, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(x in matrix_strategy()) {
            let y = normalize(&x, NormalizationSpec::Softmax).unwrap();
            for r in y.rows() {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(x in matrix_strategy(), c in -100.0f64..100.0) {
            let shifted = x.map_rows(|r| r.iter_mut().for_each(|v| *v += c)).unwrap();
            let a = normalize(&x, NormalizationSpec::Softmax).unwrap();
            let b = normalize(&shifted, NormalizationSpec::Softmax).unwrap();
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn l1_l2_idempotent(x in matrix_strategy()) {
            for spec in [NormalizationSpec::L1, NormalizationSpec::L2] {
                let Ok(once) = normalize(&x, spec) else { continue };
                let twice = normalize(&once, spec).unwrap();
                for (u, v) in once.as_slice().iter().zip(twice.as_slice()) {
                    prop_assert!((u - v).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn subsample_rows_are_distinct_members(n in 2usize..60, frac in 0.0f64..1.0, seed: u64) {
            let x = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
            let m = 2 + ((n - 2) as f64 * frac) as usize;
            let s = subsample(&x, m, seed).unwrap();
            let vals: Vec<f64> = s.as_slice().to_vec();
            prop_assert_eq!(vals.len(), m);
            for w in vals.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(vals.iter().all(|v| *v >= 0.0 && *v < n as f64));
        }
    }
}
