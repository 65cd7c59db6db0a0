//! Deterministic random substreams.
//!
//! Every random decision in the generator is drawn from a stream identified by a
//! path of tags below the root seed (for example `seed / "event" / entity / hour / k`).
//! Streams are derived by hashing, so the value drawn for one event never depends on
//! how many other events were generated before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type handed to every sampling routine.
pub type SimRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Identifier of a random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(splitmix64(seed ^ 0x5EED_0F_A11_5EED))
    }

    #[inline]
    pub fn child(self, tag: u64) -> Self {
        StreamKey(splitmix64(
            self.0 ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)),
        ))
    }

    pub fn named(self, name: &str) -> Self {
        self.child(fnv1a(name.as_bytes()))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// A seeded generator positioned at the start of this stream.
    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }

    /// One uniform draw in `[0, 1)` that is a pure function of the key.
    #[inline]
    pub fn uniform(self) -> f64 {
        (splitmix64(self.0) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
