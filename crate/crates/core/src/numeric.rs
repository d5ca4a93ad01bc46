//! Small dense-vector helpers, deterministic hashing and seeded substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `‖a − b‖ / ‖b‖`, or `‖a‖` when `b` is zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let scale = norm(b);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `ceil(ratio * n)`, ignoring float noise such as `0.1 * 30 = 3.0000000000000004`.
pub fn ceil_fraction(ratio: f64, n: usize) -> usize {
    let raw = ratio * n as f64;
    let rounded = libm::round(raw);
    if libm::fabs(raw - rounded) <= 1e-9 * (1.0 + rounded) {
        rounded as usize
    } else {
        libm::ceil(raw) as usize
    }
}

/// 64-bit FNV-1a over a stream of words.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write_u64(&mut self, word: u64) {
        for byte in word.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_f64(&mut self, x: f64) {
        self.write_u64(x.to_bits());
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

/// Named random streams. Every component draws from its own substream of the
/// run seed so it can be re-seeded or tested in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Generation = 1,
    Sampling = 2,
    Lissa = 3,
    Shuffle = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `(stream, keys...)` substream of `seed`.
pub fn derive_seed(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn substream(seed: u64, stream: Stream, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, keys))
}
