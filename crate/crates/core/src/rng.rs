//! Deterministic, platform-independent PRNG used everywhere randomness is needed.
//!
//! The generator is xorshift64* (shifts 12/25/27, multiplier
//! 0x2545_F491_4F6C_DD1D). Seeds are conditioned through one round of
//! splitmix64 so that small or zero user seeds still produce a well-mixed
//! nonzero state. All derived seeds (per-tree, per-fold) go through
//! [`derive_seed`] so parallel construction order cannot affect results.

/// One round of splitmix64. Used for seed conditioning and stream derivation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and an index
/// (tree index, fold index, epoch, ...).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_mul(0xA076_1D64_78BD_642F)))
}

#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            state = 0x9E37_79B9_7F4A_7C15;
        }
        Xorshift64Star { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, bound). `bound` must be nonzero.
    /// Plain modulo reduction: the tiny bias is irrelevant here and the
    /// reduction is trivially reproducible.
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// Standard normal via Box-Muller (one value per call; the pair's
    /// second half is discarded to keep the stream layout simple).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// `m` distinct values sampled from 0..n (partial Fisher-Yates),
    /// returned sorted ascending.
    pub fn sample_indices(&mut self, n: usize, m: usize) -> Vec<usize> {
        debug_assert!(m <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(m);
        pool.sort_unstable();
        pool
    }
}
