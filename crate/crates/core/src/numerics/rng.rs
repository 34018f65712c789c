use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded, splittable random stream.
///
/// A stream is identified by `(seed, stream)`. ChaCha's 64-bit stream
/// selector keeps streams with different ids disjoint, so work item `k`
/// of a parallel job can own `parent.substream(k)` and draw the same
/// numbers whatever the scheduling order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream keyed by `key`. Depends only on `(seed, stream, key)`,
    /// never on how much of the parent has been consumed.
    pub fn substream(&self, key: u64) -> RngStream {
        RngStream::new(self.seed, splitmix64(self.stream ^ splitmix64(key.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn take(r: &mut RngStream, n: usize) -> Vec<u64> {
        (0..n).map(|_| r.next_u64()).collect()
    }

    #[test]
    fn same_seed_and_stream_replay() {
        let a = take(&mut RngStream::new(7, 3), 64);
        let b = take(&mut RngStream::new(7, 3), 64);
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let a = take(&mut RngStream::new(7, 3), 8);
        let b = take(&mut RngStream::new(7, 4), 8);
        let c = take(&mut RngStream::new(8, 3), 8);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn substream_ignores_parent_position() {
        let mut p = RngStream::new(11, 0);
        let s1 = take(&mut p.substream(5), 16);
        take(&mut p, 1000);
        let s2 = take(&mut p.substream(5), 16);
        assert_eq!(s1, s2);
        assert_ne!(s1, take(&mut p.substream(6), 16));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngStream::new(1, 1);
        let mut s = 0.0;
        for _ in 0..100_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            s += u;
        }
        assert!((s / 100_000.0 - 0.5).abs() < 0.01);
    }
}
