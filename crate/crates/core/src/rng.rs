//! Counter-keyed RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is a
//! hash of `(master_seed, domain, a, b)`, so replicas and kicks never share
//! state and results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Kick = 1,
    Bumps = 2,
    Walk = 3,
    Polymer = 4,
    Surrogate = 5,
    Synthetic = 6,
    Init = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key into a 32-byte ChaCha seed.
pub fn substream(master_seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut s = splitmix(master_seed);
    s = splitmix(s ^ stream as u64);
    s = splitmix(s ^ a);
    s = splitmix(s ^ b.rotate_left(17));
    let mut seed = [0u8; 32];
    let mut w = s;
    for chunk in seed.chunks_mut(8) {
        w = splitmix(w);
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
