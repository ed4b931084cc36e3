//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha12 generator keyed by a
//! 64-bit seed and positioned on a stream selected by an index (typically the
//! path index). Because each path owns its stream, output is identical no
//! matter how paths are distributed across threads.
//!
//! Seeds for distinct purposes (training, validation, test, repeats) are
//! derived from a master seed with [`derive_seed`], a SplitMix64-style mix of
//! the master seed, a purpose tag and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The generator used for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for `(tag, index)` from `master`.
///
/// The tag is folded in with FNV-1a so that different purposes never share
/// a seed even for equal indices.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .map(|_| stream_rng(7, 3).random())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream_rng(7, 3).random();
        let y: u64 = stream_rng(7, 4).random();
        assert_ne!(x, y);
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let s = derive_seed(42, "train", 0);
        assert_ne!(s, derive_seed(42, "valid", 0));
        assert_ne!(s, derive_seed(42, "train", 1));
        assert_eq!(s, derive_seed(42, "train", 0));
    }
}
