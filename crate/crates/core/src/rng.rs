//! Seeded, splittable random streams.
//!
//! Every stochastic component takes a root seed and derives its own ChaCha
//! stream from it, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` under `root`.
pub fn substream(root: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

/// Two-level derivation, e.g. (component, trial index).
pub fn substream2(root: u64, component: u64, index: u64) -> ChaCha8Rng {
    substream(root ^ component.wrapping_mul(0x9E37_79B9_7F4A_7C15), index)
}
