//! Reproducible counter-based random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream addressed
//! by `(master seed, purpose, index)`: the 64-bit master seed fills the
//! cipher key, and the 64-bit stream id is `purpose << 48 | index`. ChaCha
//! is a counter-mode cipher, so streams never overlap, no two purposes
//! share a stream, and per-sample substreams can be consumed from parallel
//! workers while keeping outputs bitwise reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is consumed for; each purpose owns an index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    PriorSample = 1,
    DataSample = 2,
    ForwardSim = 3,
    TrainInit = 4,
    TrainLoop = 5,
    BackwardSample = 6,
    Verify = 7,
}

/// Maximum usable per-purpose index (48 bits).
pub const MAX_STREAM_INDEX: u64 = (1 << 48) - 1;

/// The stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index <= MAX_STREAM_INDEX);
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(!seed).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}
