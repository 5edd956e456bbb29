//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `&mut dyn RngCore`. The harness
//! derives independent, reproducible streams from a `(seed, stream id)` pair so
//! that results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Packs up to four small coordinates into a single stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, &p| (h ^ p).wrapping_mul(0x100_0000_01b3))
}
