//! Seed derivation for independent, schedule-free random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags keep streams drawn for different jobs from overlapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    PreTrain = 2,
    RoundTrain = 3,
    Partition = 4,
    Split = 5,
    ChaosKey = 6,
}

/// Derives a generator from `(seed, stream, participant, round)`; the result
/// does not depend on the order in which streams are requested.
pub fn derive(seed: u64, stream: Stream, participant: u64, round: u64) -> SimRng {
    let mut h = splitmix64(seed);
    for word in [stream as u64, participant, round] {
        h = splitmix64(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}
