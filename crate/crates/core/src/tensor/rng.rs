use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Seeded xoshiro256++ stream (state expanded from the seed with splitmix64).
///
/// All randomness in the crate flows through this type so that a single
/// `u64` seed reproduces every initializer, shuffle and synthetic scene.
#[derive(Clone, Debug)]
pub struct PrngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl PrngState {
    pub fn new(seed: u64) -> Self {
        PrngState {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        // splitmix64 finalizer over the stream id keeps neighbouring ids apart
        let mut z = stream.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        PrngState::new(seed ^ z)
    }
}

impl RngCore for PrngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = PrngState::new(42);
        let mut b = PrngState::new(42);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn known_first_output() {
        // xoshiro256++ over splitmix64(0) state, computed by hand from the
        // reference recurrences
        let mut r = PrngState::new(0);
        assert_eq!(r.next_u64(), 0x5317_5D61_490B_23DF);
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = PrngState::derive(7, 1);
        let mut b = PrngState::derive(7, 2);
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
        let mut c = PrngState::derive(7, 1);
        let mut d = PrngState::derive(7, 1);
        assert_eq!(c.gen::<u64>(), d.gen::<u64>());
    }
}
