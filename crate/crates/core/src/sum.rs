/// Pairwise (cascade) summation with a fixed split rule.
///
/// The result depends only on the values and their order, never on how work
/// was scheduled, so serial and parallel callers agree bit for bit.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

/// Sum of an iterator's items in sorted order, making it permutation invariant.
pub fn sorted_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.iter().fold(0.0, |acc, x| acc + x)
}
