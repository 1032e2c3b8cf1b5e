//! Seed derivation. Every random stream in the crate comes from one root seed
//! split by subsystem tag and a per-use counter.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Sampler = 1,
    Init = 2,
    Synth = 3,
    Batching = 4,
    Dropout = 5,
    Eval = 6,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 generator for `(root, stream)` positioned on stream word `counter`.
pub fn derive(root: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(root ^ mix(stream as u64)));
    rng.set_stream(counter);
    rng
}
