//! Counter-based deterministic random number generation.
//!
//! Every random quantity in this crate is addressed by `(seed, stream, index)`
//! rather than drawn from mutable generator state. That makes regeneration
//! order-free: weights can be materialized lazily or in parallel and still come
//! out bit-identical, which the reproducibility contract of the whole pipeline
//! leans on.

/// SplitMix64 finalizer; full-period mixing of a 64-bit counter.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes; used to derive stable stream ids from strings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A stateless generator keyed by `(seed, stream)`. Calls are addressed by a
/// caller-chosen counter, so the same index always yields the same value.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xA076_1D64_78BD_642F)));
        CounterRng { key }
    }

    #[inline]
    pub fn raw(&self, index: u64) -> u64 {
        splitmix64(self.key ^ splitmix64(index.wrapping_add(0x2545_F491_4F6C_DD1D)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        (self.raw(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&self, index: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform(index)
    }

    /// Standard normal via Box-Muller on two counter slots.
    /// Index `i` consumes raw slots `2i` and `2i + 1`.
    #[inline]
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        // 1 - u1 keeps the log argument in (0, 1].
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Integer in [0, bound) by rejection-free multiply-shift; bias is
    /// negligible for the small bounds used here (shuffles, class picks).
    #[inline]
    pub fn below(&self, index: u64, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((u128::from(self.raw(index)) * u128::from(bound)) >> 64) as u64
    }
}

/// Sequential facade over [`CounterRng`] for call sites that want ordinary
/// draw-after-draw semantics (shuffles, ordered sampling).
#[derive(Clone, Debug)]
pub struct SeqRng {
    rng: CounterRng,
    ctr: u64,
}

impl SeqRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        SeqRng {
            rng: CounterRng::new(seed, stream),
            ctr: 0,
        }
    }

    #[inline]
    fn bump(&mut self) -> u64 {
        let c = self.ctr;
        self.ctr += 1;
        c
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        let c = self.bump();
        self.rng.below(c, bound)
    }

    /// Fisher-Yates shuffle, deterministic for a given `(seed, stream)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
