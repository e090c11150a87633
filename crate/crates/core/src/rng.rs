//! xorshift64* PRNG.
//!
//! Fixture generation must be reproducible across languages, so the
//! generator pins this exact algorithm instead of an opaque library RNG:
//! the xorshift64* member of the xorshift family (shifts 12/25/27,
//! multiplier `0x2545F4914F6CDD1D`).

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    /// Seed 0 is a fixed point of xorshift; it is remapped to a nonzero
    /// constant so every seed yields a usable stream.
    pub fn new(seed: u64) -> Self {
        XorShift64Star { state: if seed == 0 { 0x9E3779B97F4A7C15 } else { seed } }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state ^= self.state >> 12;
        self.state ^= self.state << 25;
        self.state ^= self.state >> 27;
        self.state.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform value in `[0, bound)`; `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        // Modulo bias is irrelevant at fixture scale.
        self.next_u64() % bound
    }

    /// Uniform value in `[lo, hi)`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo < hi);
        lo + self.below(hi - lo)
    }

    pub fn chance(&mut self, numerator: u64, denominator: u64) -> bool {
        self.below(denominator) < numerator
    }
}
