//! Seeded random streams. Every random draw in the crate comes from a
//! [`substream`] derived from one root seed plus a label, so independent
//! consumers (simulation, contamination, bootstrap, subsampling) never share
//! a stream and results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a over the label bytes, mixed with the index.
fn label_hash(label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(h ^ splitmix(index))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label, index));
    rng
}

/// Derive a child seed, for APIs that take a plain `u64`.
pub fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix(seed ^ label_hash(label, index))
}
