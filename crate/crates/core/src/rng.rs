//! Counter-based pseudo-random streams.
//!
//! Draw `k` of a stream seeded with `s` is `splitmix64(s + (k + 1) * 0x9E3779B97F4A7C15)`,
//! which is the ordinary SplitMix64 sequence expressed as a pure function of the
//! counter. Uniforms take the top 53 bits. Gaussians use Box–Muller on consecutive
//! uniform pairs `(u1, u2)` with `u1` mapped to `(0, 1]`, emitting `r cos θ` then
//! `r sin θ`. The construction is short enough to port verbatim to other languages.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream of uniforms and standard normals.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
    spare: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
