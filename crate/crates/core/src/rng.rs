//! Deterministic RNG streams.
//!
//! Every random decision is drawn from a ChaCha stream whose seed is derived
//! from the run seed plus the coordinates of the decision (purpose, step,
//! image, hook). Results therefore never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    EpochOrder = 2,
    Augment = 3,
    Seeds = 4,
    Shuffle = 5,
    Dropout = 6,
    Cutout = 7,
    Synthetic = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the run seed with a sequence of coordinates into a stream seed.
pub fn derive_seed(run_seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(run_seed ^ splitmix64(stream as u64));
    for &c in coords {
        h = splitmix64(h ^ c);
    }
    h
}

pub fn stream(run_seed: u64, stream: Stream, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(run_seed, stream, coords))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_do_not_collide_under_swap() {
        // image 1 at step 0 must differ from image 0 at step 1
        let a = derive_seed(7, Stream::Seeds, &[0, 1]);
        let b = derive_seed(7, Stream::Seeds, &[1, 0]);
        assert_ne!(a, b);
        assert_ne!(
            derive_seed(7, Stream::Seeds, &[0]),
            derive_seed(7, Stream::Shuffle, &[0])
        );
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(
            derive_seed(42, Stream::Init, &[]),
            derive_seed(42, Stream::Init, &[])
        );
    }
}
