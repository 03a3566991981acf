//! Deterministic random numbers.
//!
//! SplitMix64 (Steele, Lea, Flood 2014): a 64-bit mixing generator with a
//! simple additive state walk. It is seedable, splittable by key mixing,
//! and its output is reproducible bit-for-bit across platforms and crate
//! versions, which every output artifact of this crate relies on. The seed
//! is recorded in every report.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derived stream for a replica or task: documented as
    /// mix(master ⊕ mix(stream_id + γ)).
    pub fn derive(master: u64, stream_id: u64) -> Self {
        SplitMix64::new(master ^ mix(stream_id.wrapping_add(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform f64 in [0, 1): 53 mantissa bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform integer in [0, bound) by rejection on the top bits.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        // zone = largest multiple of bound that fits in u64
        let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }
}
