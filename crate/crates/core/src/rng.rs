//! Splittable, platform-independent randomness.
//!
//! Every random draw in the crate starts from an [`RngState`]. A state names
//! a ChaCha8 key (the seed) and a stream; child states for independent
//! purposes are derived by hashing a tag into the stream id, so the draws a
//! stage sees never depend on how many draws another stage made.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Child state for `tag`. Deterministic; distinct tags give distinct
    /// streams under the same key.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix64(mix64(self.stream) ^ tag.rotate_left(17) ^ 0xD1B5_4A32_D192_ED03),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Free-function form of [`RngState::derive`].
pub fn derive_rng(master: RngState, tag: u64) -> RngState {
    master.derive(tag)
}

/// Picks `k` distinct indices out of `0..n` uniformly at random, returned in
/// ascending order. Uses a partial Fisher-Yates shuffle with 64-bit index
/// draws so the result does not depend on the platform's word size.
pub fn sample_without_replacement<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i as u64..n as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Purpose tags used to split a master state. Kept in one place so no two
/// stages accidentally share a stream.
pub mod tags {
    pub const SOURCE_SCENE: u64 = 1;
    pub const TARGET_SCENE: u64 = 2;
    pub const SOURCE_AUGMENT: u64 = 3;
    pub const TARGET_AUGMENT: u64 = 4;
    pub const HEAD_ONE: u64 = 5;
    pub const HEAD_TWO: u64 = 6;
    pub const SELECTION: u64 = 7;
    pub const MIXED_AUGMENT: u64 = 8;
    pub const MIXED_PREDICTION: u64 = 9;
    pub const SOURCE_PREDICTION: u64 = 10;
    pub const SCENE_IMAGE_NOISE: u64 = 11;
    pub const SCENE_PATCHES: u64 = 12;
    pub const SCENE_ROADS: u64 = 13;
    pub const SCENE_WATER: u64 = 14;
    pub const SCENE_FIELDS: u64 = 15;
    pub const SCENE_BUILDINGS: u64 = 16;
    pub const TRIAL: u64 = 0x7472_6961_6c00_0000;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(state: RngState, n: usize) -> Vec<u64> {
        let mut rng = state.rng();
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn tags_separate_streams() {
        let master = RngState::new(42);
        assert_ne!(draws(master.derive(0), 1), draws(master.derive(1), 1));
    }

    #[test]
    fn derivation_is_deterministic() {
        let master = RngState::new(42);
        assert_eq!(draws(master.derive(0), 64), draws(derive_rng(master, 0), 64));
    }

    #[test]
    fn known_first_draw_is_stable() {
        // Frozen so that a dependency upgrade changing the stream would be noticed.
        let a = draws(RngState::new(42).derive(0), 2);
        assert_eq!(a, vec![8066068699390646548, 192990983523979928]);
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        // chi-square tally over 10 bins of 1000 draws; 9 dof, mean 9, sd sqrt(18)
        let mut rng = RngState::new(42).derive(0).rng();
        let mut bins = [0u32; 10];
        for _ in 0..1000 {
            bins[rng.gen_range(0..10u32) as usize] += 1;
        }
        let expected = 100.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 9.0 + 3.0 * 18f64.sqrt(), "chi2 = {chi2}, bins = {bins:?}");
    }

    #[test]
    fn sampling_without_replacement() {
        let mut rng = RngState::new(5).rng();
        let picked = sample_without_replacement(&mut rng, 10, 4);
        assert_eq!(picked.len(), 4);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert!(picked.iter().all(|&i| i < 10));
        assert_eq!(sample_without_replacement(&mut rng, 3, 5).len(), 3);
    }
}
