//! Counter-based reproducible random number streams.
//!
//! Every random quantity in this crate is a pure function of a 64-bit key
//! and a counter, so any participant can regenerate any value independently
//! without coordination: worker `l` can produce coordinate `j` of direction
//! `w_i` without generating the coordinates held by other workers. The
//! generator is random-access SplitMix64: `value(key, n)` finalizes
//! `key + (n+1) * GOLDEN`.

/// Golden-ratio increment used by SplitMix64.
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit mixer with full avalanche; `mix64(0) != 0`.
pub fn mix64(z: u64) -> u64 {
    finalize(z.wrapping_add(GOLDEN))
}

/// Fold a list of parts into a stream key. Used to derive purpose-specific
/// sub-streams, e.g. `derive_key(&[global_seed, tags::OMEGA, iteration])`.
pub fn derive_key(parts: &[u64]) -> u64 {
    let mut k = 0x243f_6a88_85a3_08d3; // pi fraction, arbitrary non-zero start
    for &p in parts {
        k = mix64(k ^ mix64(p));
    }
    k
}

/// The `n`-th value of the stream under `key`, without materializing state.
pub fn stream_value(key: u64, n: u64) -> u64 {
    finalize(key.wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Purpose tags keeping independent sub-streams apart.
pub mod tags {
    pub const OMEGA: u64 = 0x01;
    pub const MASK_SECRET: u64 = 0x02;
    pub const SAMPLE: u64 = 0x03;
    pub const TREE_T0: u64 = 0x04;
    pub const TREE_T1: u64 = 0x05;
    pub const TREE_T2: u64 = 0x06;
    pub const L_PRIME: u64 = 0x07;
    pub const SPLIT: u64 = 0x08;
    pub const PHI_OFFSET: u64 = 0x09;
    pub const EVAL_TREE: u64 = 0x0a;
    pub const BENCH: u64 = 0x0b;
    pub const DATAGEN: u64 = 0x0c;
    pub const AUDIT: u64 = 0x0d;
}

/// Sequential view over a counter stream.
#[derive(Clone, Copy, Debug)]
pub struct CounterStream {
    key: u64,
    counter: u64,
}

impl CounterStream {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Start the stream at an explicit counter offset.
    pub fn at(key: u64, counter: u64) -> Self {
        Self { key, counter }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = stream_value(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe as a `ln` argument.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, 2*pi)`.
    pub fn next_angle(&mut self) -> f64 {
        self.next_f64() * std::f64::consts::TAU
    }

    /// Uniform in `[0, n)`. Modulo bias is negligible for the small `n`
    /// used here (worker counts, sample counts).
    pub fn next_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Seeded Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_range(i + 1);
            items.swap(i, j);
        }
    }
}
