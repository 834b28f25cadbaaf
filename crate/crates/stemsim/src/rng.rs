//! Counter-based deterministic random streams.
//!
//! Every random decision in a run is derived by hashing a key of the form
//! `(seed, stream tag, worker, time, draw index)`, so the value of a draw
//! never depends on how many draws other workers made or on execution order.
//! The mixer is the SplitMix64 finalizer; output is stable across platforms.

/// Stream tag: per-worker initial batch `B₁`.
pub const STREAM_INIT_BATCH: u64 = 0x5445_4d31;
/// Stream tag: per-worker, per-iteration minibatch.
pub const STREAM_LOCAL_BATCH: u64 = 0x5445_4d32;
/// Stream tag: uniform pick of the output iterate.
pub const STREAM_OUTPUT_PICK: u64 = 0x5445_4d33;
/// Stream tag: dataset/problem generation.
pub const STREAM_PROBLEM_GEN: u64 = 0x5445_4d34;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a 5-word key into one 64-bit value.
#[inline]
pub fn keyed_u64(seed: u64, stream: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix(seed ^ 0xA076_1D64_78BD_642F);
    h = mix(h ^ stream);
    h = mix(h ^ a);
    h = mix(h ^ b);
    h = mix(h ^ c);
    h
}

/// Map a 64-bit value onto `[0, n)` by the multiply-shift method.
#[inline]
pub fn to_index(x: u64, n: usize) -> usize {
    debug_assert!(n > 0);
    (((x as u128) * (n as u128)) >> 64) as usize
}

/// The i.i.d.-with-replacement minibatch for `(seed, stream, worker, t)`:
/// draw `i` is a pure function of the key, independent of all other draws.
pub fn draw_batch(seed: u64, stream: u64, worker: usize, t: u64, b: usize, n: usize) -> Vec<usize> {
    (0..b)
        .map(|i| to_index(keyed_u64(seed, stream, worker as u64, t, i as u64), n))
        .collect()
}

/// Sequential deterministic generator for dataset synthesis.
///
/// Seeded from a hashed key; the stream itself is consumed in a fixed order
/// during problem construction, which is single-threaded.
#[derive(Clone, Debug)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn from_key(seed: u64, stream: u64, a: u64, b: u64) -> Self {
        DetRng {
            state: keyed_u64(seed, stream, a, b, 0x6b79),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `[0, n)`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        to_index(self.next_u64(), n)
    }

    /// Standard normal via the polar (Marsaglia) method.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    pub fn bool_with_prob(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
