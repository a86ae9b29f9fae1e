//! Counter-based splittable random streams.
//!
//! Every stream is a pure function of (key, counter): drawing advances only the
//! counter, and substreams are derived by hashing an index into the key. This
//! makes parallel simulation bit-identical regardless of worker count — worker
//! `i` derives its stream from (seed, i) instead of sharing mutable state.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a strong 64-bit mixing permutation.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a key with an index to derive a child key.
#[inline]
fn derive_key(key: u64, index: u64) -> u64 {
    mix64(key.wrapping_add(GAMMA).wrapping_add(mix64(index ^ 0xD6E8_FEB8_6659_FD93)))
}

/// A counter-based pseudo-random stream (SplitMix64 output sequence).
#[derive(Clone, Debug)]
pub struct RandomStream {
    key: u64,
    ctr: u64,
    spare_normal: Option<f64>,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        RandomStream { key: mix64(seed ^ GAMMA), ctr: 0, spare_normal: None }
    }

    /// Derive an independent substream; `self` is not advanced.
    pub fn substream(&self, index: u64) -> Self {
        RandomStream { key: derive_key(self.key, index), ctr: 0, spare_normal: None }
    }

    /// Derive a substream two levels deep, e.g. (domain, item).
    pub fn substream2(&self, a: u64, b: u64) -> Self {
        self.substream(a).substream(b)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(1);
        mix64(self.key.wrapping_add(self.ctr.wrapping_mul(GAMMA)))
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform on (0, 1]; safe as a log argument.
    #[inline]
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box–Muller (caches the second variate).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    /// Bernoulli(p).
    #[inline]
    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

/// Pure hash of (key, a, b) to a uniform [0,1) value, for stateless
/// per-point decisions (e.g. deterministic thinning).
#[inline]
pub fn point_hash_unit(key: u64, a: u64, b: u64) -> f64 {
    let h = mix64(derive_key(key, a) ^ mix64(b.wrapping_mul(GAMMA) ^ 0xA076_1D64_78BD_642F));
    (h >> 11) as f64 * (1.0 / 9007199254740992.0)
}
