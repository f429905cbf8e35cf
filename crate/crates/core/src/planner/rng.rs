use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator. The whole state is one `u64`; it is serialized as
/// the signed 64-bit integer with the same bits so it fits a canonical int.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rng64 {
    state: u64,
}

impl Serialize for Rng64 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.state as i64)
    }
}

impl<'de> Deserialize<'de> for Rng64 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self { state: i64::deserialize(d)? as u64 })
    }
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `[0, n)` as `floor(n * (v >> 11) / 2^53)`.
    ///
    /// # Panics
    /// If `n` is zero.
    pub fn index(&mut self, n: u64) -> u64 {
        assert!(n > 0, "rng index range must be positive");
        let top = (self.next_u64() >> 11) as u128;
        ((n as u128 * top) >> 53) as u64
    }

    /// Uniform real in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal via Box-Muller on two draws.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Functional form: `(value, advanced generator)`.
pub fn rng_next(r: Rng64) -> (u64, Rng64) {
    let mut next = r;
    let v = next.next_u64();
    (v, next)
}

/// Functional form of [`Rng64::index`].
pub fn rng_index(r: Rng64, n: u64) -> (u64, Rng64) {
    let mut next = r;
    let v = next.index(n);
    (v, next)
}
