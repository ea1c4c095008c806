//! Seeded random streams.
//!
//! Every random decision draws from a ChaCha8 stream keyed by
//! `(seed, stream, a, b)`. The key is folded through SplitMix64:
//!
//! ```text
//! s0 = mix(seed ^ 0x6A09E667F3BCC909)
//! s1 = mix(s0 ^ stream_tag)
//! s2 = mix(s1 ^ a)
//! s3 = mix(s2 ^ b)
//! ```
//!
//! and the 32-byte ChaCha key is the little-endian concatenation of
//! `mix(s3 + k·γ)` for `k = 1..=4` (γ the SplitMix64 increment). `a` and `b`
//! carry the sub-stream coordinates, e.g. `(epoch, node_type)`. Both
//! SplitMix64 and ChaCha8 are platform independent, so seeded outputs are
//! stable across machines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Named purposes for random streams. The discriminant is the stream tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Corrupt = 2,
    MetaSample = 3,
    Sparsify = 4,
    Split = 5,
    KMeans = 6,
    Synthetic = 7,
    /// Per-epoch sub-seed derivation inside the training loop.
    Epoch = 8,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `(seed, stream, a, b)` into one 64-bit value.
pub fn derive_seed(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let s0 = splitmix64(seed ^ 0x6A09_E667_F3BC_C909);
    let s1 = splitmix64(s0 ^ stream as u64);
    let s2 = splitmix64(s1 ^ a);
    splitmix64(s2 ^ b)
}

pub fn stream_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let s = derive_seed(seed, stream, a, b);
    let mut key = [0u8; 32];
    for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(s.wrapping_add((k as u64 + 1).wrapping_mul(GAMMA)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
