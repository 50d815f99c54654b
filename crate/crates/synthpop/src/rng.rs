//! Deterministic pseudo-random streams.
//!
//! Everything downstream of a seed is computed with integer arithmetic only,
//! so identical seeds give identical draws on every platform and regardless
//! of thread scheduling. Not cryptographically secure.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer. Bijective with full avalanche; maps 0 to 0.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes, used to fold string labels into stream ids.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stateless draw addressed by a seed plus a tuple of counters.
///
/// The same `(seed, parts)` always yields the same value, which lets
/// independent cells of a table receive independent noise without any
/// ordering constraints between them.
pub fn counter_draw(seed: u64, parts: &[u64]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    for &p in parts {
        h = mix64(h.wrapping_add(GOLDEN).wrapping_add(p));
    }
    h
}

/// Sequential splitmix64 stream.
#[derive(Clone, Debug)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            state: mix64(seed ^ GOLDEN),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform value in `[0, n)` via multiply-shift reduction.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }
}
