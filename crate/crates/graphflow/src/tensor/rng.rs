//! Counter-based random numbers.
//!
//! Each draw is a pure integer hash of (seed, stream, counter), so a stream
//! can be replayed from any point and draws do not depend on batching order
//! or thread schedule. Normal variates use Box-Muller on fixed-width
//! uniforms; floating point here is exact, hence platform-independent.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed counter generator. State is the full (seed, stream, counter)
/// triple; `key` is a cached hash of the first two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    pub seed: u64,
    pub stream: u64,
    pub counter: u64,
    key: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix64(seed ^ mix64(stream.wrapping_mul(GAMMA) ^ 0x1F12_3BB5_159A_55E5));
        Rng { seed, stream, counter: 0, key }
    }

    /// Resume an interrupted stream at an explicit counter position.
    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut r = Rng::new(seed, stream);
        r.counter = counter;
        r
    }

    /// Child stream keyed by `tag`. Independent of this stream's counter.
    pub fn substream(&self, tag: u64) -> Rng {
        Rng::new(self.seed, mix64(self.stream ^ tag.wrapping_mul(GAMMA) ^ 0x243F_6A88_85A3_08D3))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let x = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)));
        self.counter += 1;
        x
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 53-bit uniform scaled; bias is negligible for the small n used here
        // and the result stays identical on every platform.
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal. Consumes exactly two counter positions per draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
