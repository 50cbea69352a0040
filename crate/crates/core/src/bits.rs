//! Shared primitives: fixed-length binary genotypes, finite fitness values,
//! and the deterministic RNG contract used by every trial.
//!
//! Reproducibility contract: a trial is fully determined by its [`RngSeed`].
//! Per-trial seeds are derived from a master seed and a trial index with
//! [`RngSeed::for_trial`], so trials can run in any order (or in parallel)
//! and still produce identical streams.

use std::fmt;
use std::ops::Sub;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// The generator backing all stochastic decisions. Seedable and cheap to fork
/// by deriving child seeds.
pub type SearchRng = rand_chacha::ChaCha8Rng;

/// A 64-bit seed. Identical seed + identical call sequence => identical stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Builds the generator for this seed.
    pub fn rng(self) -> SearchRng {
        SearchRng::seed_from_u64(self.0)
    }

    /// Derives the independent seed for one trial. SplitMix64-style mixing so
    /// that nearby trial indices produce unrelated streams.
    pub fn for_trial(self, trial_index: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(trial_index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        RngSeed(z ^ (z >> 31))
    }
}

/// A fitness value. Finite by construction; all problems are maximized.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Fitness(f64);

impl Fitness {
    pub fn new(value: f64) -> Fitness {
        assert!(value.is_finite(), "fitness must be finite, got {value}");
        Fitness(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Fitness {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl Eq for Fitness {}

impl PartialOrd for Fitness {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fitness {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Finite invariant makes total_cmp agree with the usual order.
        self.0.total_cmp(&other.0)
    }
}

impl Sub for Fitness {
    type Output = f64;

    fn sub(self, rhs: Fitness) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A fixed-length binary solution vector. Length never changes after
/// construction and every element is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitstring {
    bits: Vec<bool>,
}

impl Bitstring {
    pub fn zeros(len: usize) -> Bitstring {
        Bitstring { bits: vec![false; len] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Bitstring {
        Bitstring { bits }
    }

    /// Each bit independently Bernoulli(1/2).
    pub fn random(len: usize, rng: &mut impl Rng) -> Bitstring {
        Bitstring { bits: (0..len).map(|_| rng.random_bool(0.5)).collect() }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn flip(&mut self, i: usize) {
        self.bits[i] = !self.bits[i];
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("invalid bit character {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Bitstring::from_bits)
    }
}

/// Number of positions where `a` and `b` differ.
///
/// Symmetric, zero iff equal, and satisfies the triangle inequality.
pub fn hamming_distance(a: &Bitstring, b: &Bitstring) -> usize {
    assert_eq!(a.len(), b.len(), "hamming_distance requires equal lengths");
    a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count()
}

/// Returns a copy of `x` with exactly `k` distinct positions inverted,
/// positions chosen uniformly without replacement (partial Fisher-Yates).
pub fn flip_distinct_bits(x: &Bitstring, k: usize, rng: &mut impl Rng) -> Bitstring {
    let n = x.len();
    assert!(k >= 1, "flip_distinct_bits requires k >= 1");
    assert!(k <= n, "flip_distinct_bits requires k <= length ({k} > {n})");
    let mut indices: Vec<usize> = (0..n).collect();
    let mut out = x.clone();
    for j in 0..k {
        let pick = j + rng.random_range(0..n - j);
        indices.swap(j, pick);
        out.flip(indices[j]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    #[test]
    fn hamming_identity() {
        let a = bs("000000000000");
        assert_eq!(hamming_distance(&a, &a), 0);
    }

    #[test]
    fn hamming_full_complement() {
        let a = bs("101010101010");
        let b = bs("010101010101");
        assert_eq!(hamming_distance(&a, &b), 12);
    }

    #[test]
    fn hamming_positional_count() {
        let a = bs("110000000000");
        let b = bs("101000000000");
        assert_eq!(hamming_distance(&a, &b), 2);
    }

    #[test]
    #[should_panic(expected = "equal lengths")]
    fn hamming_length_mismatch_panics() {
        hamming_distance(&bs("00"), &bs("000"));
    }

    #[test]
    fn flip_all_is_complement() {
        let mut rng = RngSeed(1).rng();
        let x = bs("00000");
        assert_eq!(flip_distinct_bits(&x, 5, &mut rng), bs("11111"));
    }

    #[test]
    fn flip_distance_matches_k() {
        let mut rng = RngSeed(7).rng();
        for k in [1usize, 5] {
            for _ in 0..50 {
                let x = Bitstring::random(40, &mut rng);
                let y = flip_distinct_bits(&x, k, &mut rng);
                assert_eq!(hamming_distance(&x, &y), k);
            }
        }
    }

    #[test]
    fn flip_leaves_input_unmodified() {
        let mut rng = RngSeed(3).rng();
        let x = Bitstring::random(20, &mut rng);
        let snapshot = x.clone();
        let _ = flip_distinct_bits(&x, 4, &mut rng);
        assert_eq!(x, snapshot);
    }

    #[test]
    #[should_panic(expected = "k <= length")]
    fn flip_too_many_bits_panics() {
        let mut rng = RngSeed(0).rng();
        flip_distinct_bits(&bs("0000"), 5, &mut rng);
    }

    #[test]
    fn flip_twice_with_same_stream_is_identity() {
        // Seeding the rng identically repeats the position choices, so the
        // second application undoes the first.
        let x = Bitstring::random(64, &mut RngSeed(11).rng());
        let y = flip_distinct_bits(&x, 9, &mut RngSeed(42).rng());
        let z = flip_distinct_bits(&y, 9, &mut RngSeed(42).rng());
        assert_eq!(x, z);
    }

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        let master = RngSeed(123);
        let a = master.for_trial(0);
        let b = master.for_trial(1);
        assert_ne!(a, b);
        assert_eq!(a, master.for_trial(0));
    }

    #[test]
    #[should_panic(expected = "finite")]
    fn fitness_rejects_nan() {
        Fitness::new(f64::NAN);
    }

    proptest! {
        #[test]
        fn hamming_triangle_inequality(seed in 0u64..1000, len in 1usize..64) {
            let mut rng = RngSeed(seed).rng();
            let a = Bitstring::random(len, &mut rng);
            let b = Bitstring::random(len, &mut rng);
            let c = Bitstring::random(len, &mut rng);
            prop_assert!(
                hamming_distance(&a, &c) <= hamming_distance(&a, &b) + hamming_distance(&b, &c)
            );
        }

        #[test]
        fn hamming_symmetric(seed in 0u64..1000, len in 1usize..64) {
            let mut rng = RngSeed(seed).rng();
            let a = Bitstring::random(len, &mut rng);
            let b = Bitstring::random(len, &mut rng);
            prop_assert_eq!(hamming_distance(&a, &b), hamming_distance(&b, &a));
        }

        #[test]
        fn flip_changes_exactly_k(seed in 0u64..1000, len in 1usize..96) {
            let mut rng = RngSeed(seed).rng();
            let k = 1 + (seed as usize) % len;
            let x = Bitstring::random(len, &mut rng);
            let y = flip_distinct_bits(&x, k, &mut rng);
            prop_assert_eq!(hamming_distance(&x, &y), k);
        }
    }
}
