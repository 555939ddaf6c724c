//! Reproducible random streams.
//!
//! The generator is xoshiro256** seeded through SplitMix64, so any
//! implementation of those two published algorithms reproduces the same
//! sequences from the same `u64` seed:
//!
//! * state words `s[0..4]` are four successive SplitMix64 outputs of `seed`;
//! * `next_u64` is the reference xoshiro256** step;
//! * `next_f64` maps the top 53 bits to the open interval (0, 1) as
//!   `((x >> 11) + 0.5) * 2^-53`;
//! * independent streams use [`derive_seed`]: the first SplitMix64 output of
//!   `seed + (stream + 1) * 0x9E3779B97F4A7C15` (wrapping).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut s = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN));
    splitmix64(&mut s)
}

#[derive(Debug, Clone)]
pub struct Xoshiro256 {
    s: [u64; 4],
}

impl Xoshiro256 {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` (`n > 0`), by rejection to avoid modulo bias.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index on empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unit Frechet draw, `-1 / ln(u)`.
    pub fn next_unit_frechet(&mut self) -> f64 {
        -1.0 / self.next_f64().ln()
    }
}
