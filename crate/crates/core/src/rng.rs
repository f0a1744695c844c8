//! Counter-based random number generation.
//!
//! Every random quantity in the crate is a pure function of a key
//! `(master seed, replicate, stream tag, counter...)`, hashed through a
//! 64-bit finalizer. This gives reproducible parallelism without handing
//! stream state between threads: replicate `r` draws the same numbers no
//! matter which thread runs it or in which order, and grid noise keyed by
//! `(step, site, type)` can be replayed by coupled integrators without
//! storing noise arrays.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: full-avalanche 64-bit mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a key tuple into one 64-bit word.
#[inline]
pub fn hash_key(words: &[u64]) -> u64 {
    let mut h = 0x5851_f42d_4c95_7f2d_u64;
    for &w in words {
        h = mix64(h ^ w.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN);
    }
    mix64(h)
}

/// Uniform in `(0, 1]` from a hashed word (safe under `ln`).
#[inline]
fn unit_open_zero(h: u64) -> f64 {
    ((h >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[0, 1)` from a hashed word.
#[inline]
fn unit_half_open(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate as a pure function of a key (Box–Muller).
#[inline]
pub fn normal_at(key: u64) -> f64 {
    let u1 = unit_open_zero(mix64(key ^ 0xa076_1d64_78bd_642f));
    let u2 = unit_half_open(mix64(key ^ 0xe703_7ed1_a0b4_28db));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Stream tags keep draws for different purposes disjoint within a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    ParticleEvents = 1,
    DiffusionNoise = 2,
    KappaEvents = 3,
    AlphaNoise = 4,
    AggregateNoise = 5,
}

/// Sequential draw stream for event-driven simulation.
///
/// The stream is itself counter-based: draw `n` is `hash(base, n)`, so a
/// stream can be recreated from `(seed, replicate, tag)` at any point.
#[derive(Debug, Clone)]
pub struct CounterStream {
    base: u64,
    counter: u64,
}

impl CounterStream {
    pub fn new(seed: u64, replicate: u64, tag: StreamTag) -> Self {
        Self {
            base: hash_key(&[seed, replicate, tag as u64]),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let h = mix64(self.base ^ self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        h
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        unit_half_open(self.next_u64())
    }

    /// Exponential waiting time with the given rate.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -unit_open_zero(self.next_u64()).ln() / rate
    }

    /// Standard normal (Box–Muller, cosine branch).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = unit_open_zero(self.next_u64());
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson count with the given mean (Knuth below 30, else rounded
    /// normal approximation). Used only by the tau-leaping profile mode.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        if mean < 30.0 {
            let limit = (-mean).exp();
            let mut k = 0u64;
            let mut p = 1.0;
            loop {
                p *= unit_open_zero(self.next_u64());
                if p <= limit {
                    return k;
                }
                k += 1;
            }
        }
        let g = self.normal();
        (mean + mean.sqrt() * g).round().max(0.0) as u64
    }
}

/// Grid noise for the diffusion integrators: a standard Gaussian for every
/// `(step, cell)` of one replicate, with no stored state.
#[derive(Debug, Clone, Copy)]
pub struct GridNoise {
    base: u64,
}

impl GridNoise {
    pub fn new(seed: u64, replicate: u64, tag: StreamTag) -> Self {
        Self {
            base: hash_key(&[seed, replicate, tag as u64]),
        }
    }

    /// Standard normal for grid step `step` and flat cell index `cell`.
    #[inline]
    pub fn gaussian(&self, step: u64, cell: u64) -> f64 {
        normal_at(hash_key(&[self.base, step, cell]))
    }

    /// Uniform in `[0, 1)` for the same keying, independent of the gaussian.
    #[inline]
    pub fn uniform(&self, step: u64, cell: u64) -> f64 {
        unit_half_open(mix64(hash_key(&[self.base, step, cell]) ^ 0x9fb2_1c65_1e98_df25))
    }
}
