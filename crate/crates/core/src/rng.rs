//! Seeded randomness with a pinned algorithm.
//!
//! Subset selection is part of the on-disk contract: a report names a seed, and
//! anyone re-running the same recipe (in any language) must draw the same rows.
//! The pieces are therefore fixed here rather than delegated to a crate whose
//! sampling internals may change between releases:
//!
//! * generator: xoshiro256** (Blackman & Vigna), state seeded by four
//!   successive SplitMix64 outputs of the user seed;
//! * bounded draws: Lemire's multiply-shift with rejection, which is unbiased;
//! * subsets: partial Fisher–Yates over `0..n`; step `i` swaps position `i`
//!   with `i + below(n - i)`. The first `m` positions are the selection.
//!
//! Because step `i` does not depend on `m`, a larger subset drawn with the same
//! seed always contains every smaller one.

use rand::RngCore;

#[derive(Debug, Clone)]
pub struct Xoshiro256 {
    s: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Xoshiro256 {
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { s }
    }

    /// Derives an independent stream for a labelled sub-task of a seeded run.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut sm = seed ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03);
        Self::seed_from(splitmix64(&mut sm))
    }

    pub fn next_word(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        let mut m = (self.next_word() as u128) * (bound as u128);
        let mut low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            while low < threshold {
                m = (self.next_word() as u128) * (bound as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }
}

impl RngCore for Xoshiro256 {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Partial Fisher–Yates: `m` distinct draws from `candidates`, in draw order.
pub fn choose<T: Copy>(candidates: &[T], m: usize, rng: &mut Xoshiro256) -> Vec<T> {
    assert!(m <= candidates.len());
    let mut pool = candidates.to_vec();
    let n = pool.len();
    for i in 0..m {
        let j = i + rng.below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool
}

/// Sorted selection of `m` distinct indices from `0..n` for `seed`.
pub fn subset_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let all: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256::seed_from(seed);
    let mut picked = choose(&all, m, &mut rng);
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stream() {
        // xoshiro256** reference output for state {1, 2, 3, 4}.
        let mut rng = Xoshiro256 { s: [1, 2, 3, 4] };
        let got: Vec<u64> = (0..4).map(|_| rng.next_word()).collect();
        assert_eq!(got, vec![11520, 0, 1509978240, 1215971899390074240]);
    }

    #[test]
    fn splitmix_reference() {
        let mut s = 1234567u64;
        assert_eq!(splitmix64(&mut s), 6457827717110365317);
        assert_eq!(splitmix64(&mut s), 3203168211198807973);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Xoshiro256::seed_from(9);
        for bound in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..200 {
                assert!(rng.below(bound) < bound);
            }
        }
    }

    #[test]
    fn nested_subsets() {
        let small = subset_indices(100, 10, 42);
        let large = subset_indices(100, 40, 42);
        assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn full_subset_is_identity() {
        assert_eq!(subset_indices(7, 7, 3), (0..7).collect::<Vec<_>>());
    }
}
