//! Counter-based random streams.
//!
//! Every traced ray owns a stream keyed by `(global_seed, batch_id, ray_id)`.
//! The key is the ChaCha key/stream-id pair, so a stream is a pure function of
//! its key and never depends on which worker traced the ray or in what order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub global_seed: u64,
    pub batch_id: u64,
    pub ray_id: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(key: StreamKey) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&key.global_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&key.batch_id.to_le_bytes());
        // domain tag so that keys never collide with plain seed_from_u64 use
        seed[16..24].copy_from_slice(b"fvsim-rs");
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_stream(key.ray_id);
        Self { inner }
    }

    pub fn from_parts(global_seed: u64, batch_id: u64, ray_id: u64) -> Self {
        Self::new(StreamKey { global_seed, batch_id, ray_id })
    }

    /// Uniform sample in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Bernoulli trial with success probability `p`.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
