//! Seeded random streams. Each consumer of randomness draws from its own
//! stream so that, for a fixed seed, the topology, the piece set and the
//! interference schedule do not depend on what the strategy under test does.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const STREAM_TOPOLOGY: u64 = 1;
pub const STREAM_PIECES: u64 = 2;
pub const STREAM_INTERFERENCE: u64 = 3;
pub const STREAM_REQUESTS: u64 = 4;

pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    ChaCha8Rng::seed_from_u64(mixed)
}
