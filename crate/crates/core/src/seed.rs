//! Stable seed derivation.
//!
//! Seeds are derived from `(master_seed, component_name, index)` with FNV-1a
//! followed by a SplitMix64 finalizer. Both are fixed algorithms, so derived
//! seeds are identical across platforms and compiler versions.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, component.as_bytes());
    h = fnv1a(h, &index.to_le_bytes());
    splitmix64(h)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inverse-CDF draw from an (approximately) normalized probability row.
/// Rounding slack at the top end falls to the last positive entry.
pub fn sample_categorical<F: Scalar>(probs: &[F], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.to_f64_lossy();
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_component_sensitive() {
        let a = derive_seed(42, "dataset", 0);
        assert_eq!(a, derive_seed(42, "dataset", 0));
        assert_ne!(a, derive_seed(42, "ensemble", 0));
        assert_ne!(a, derive_seed(42, "dataset", 1));
        assert_ne!(a, derive_seed(43, "dataset", 0));
    }

    #[test]
    fn categorical_point_mass_and_frequencies() {
        let mut rng = rng_from_seed(5);
        assert!((0..1000).all(|_| sample_categorical(&[0.0, 1.0, 0.0], &mut rng) == 1));
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_categorical(&[0.25f64, 0.75], &mut rng) == 0).count();
        assert!((hits as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn known_value_is_frozen() {
        // Frozen so that on-disk artifacts stay reproducible across releases.
        assert_eq!(derive_seed(42, "dataset", 0), 0x02cd_ba01_88d8_0d7b);
    }
}
