//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by a
//! 64-bit seed and a stream id. ChaCha is a counter-based generator, so a
//! `(seed, stream)` pair fixes the sequence on every platform, and distinct
//! stream ids give independent sequences from the same seed. Each consumer
//! uses its own [`Stream`] so that changing one part of a run (for example
//! the simulation backend) leaves the draws of the other parts untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Edges,
    Signs,
    CandidateTimes,
    VertexAssignment,
    Acceptance,
    /// Permutations and sign layout of the complementary network.
    Layout,
    /// Common drivers (W, B) of the fluctuation limit.
    CommonDriver,
    /// Idiosyncratic drivers of tracked vertex `k` in the fluctuation limit.
    VertexDriver(u32),
    /// Per-vertex Poisson clock of the time-change backend.
    VertexClock(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Edges => 1,
            Stream::Signs => 2,
            Stream::CandidateTimes => 3,
            Stream::VertexAssignment => 4,
            Stream::Acceptance => 5,
            Stream::Layout => 6,
            Stream::CommonDriver => 7,
            Stream::VertexDriver(k) => (1 << 32) | u64::from(k),
            Stream::VertexClock(i) => (2 << 32) | u64::from(i),
        }
    }
}

pub fn stream(seed: u64, purpose: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.id());
    rng
}

/// SplitMix64 finaliser applied to `master ⊕ (index · golden gamma)`.
///
/// Used to expand a master seed into per-replicate seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Network and simulation seeds of replicate `r` under a master seed.
pub fn replicate_seeds(master: u64, replicate: usize) -> (u64, u64) {
    let r = replicate as u64;
    (derive_seed(master, 2 * r), derive_seed(master, 2 * r + 1))
}
