//! Counter-based random streams.
//!
//! Every molecule owns a ChaCha8 stream selected by `(seed, domain, molecule id)`;
//! the position inside the stream is an explicit draw counter, so a stream can be
//! resumed anywhere and results never depend on scheduling or worker count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains, so loading, dynamics, and detection never share numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Load = 0x4c4f_4144,
    Dynamics = 0x4459_4e41,
    Detection = 0x4445_5445,
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream of one molecule in one domain, resumable from a draw counter.
pub struct Stream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, id: u64) -> Self {
        Self::resume(seed, domain, id, 0)
    }

    pub fn resume(seed: u64, domain: Domain, id: u64, draws: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(domain as u64)));
        rng.set_stream(id);
        // every draw consumes one 64-bit output, i.e. two 32-bit words
        rng.set_word_pos(u128::from(draws) * 2);
        Self { rng, draws }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (two draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Exponential waiting time with the given rate; infinite for rate 0.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        -(1.0 - self.uniform()).ln() / rate
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        self.uniform() < p
    }

    /// Generic access for external samplers. Draws through this are not counted,
    /// so only use it for a fixed number of outputs per call site.
    pub fn with_rng<R>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        let before = self.rng.get_word_pos();
        let out = f(&mut self.rng);
        let used = self.rng.get_word_pos() - before;
        self.draws += used.div_ceil(2) as u64;
        if used % 2 == 1 {
            let _ = self.rng.random::<u32>();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resume_matches_continuous_stream() {
        let mut a = Stream::new(7, Domain::Dynamics, 42);
        let first: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        let mut b = Stream::resume(7, Domain::Dynamics, 42, 4);
        assert_eq!(b.next_u64(), first[4]);
        assert_eq!(a.draws(), 10);
    }

    #[test]
    fn streams_are_distinct() {
        let x = Stream::new(1, Domain::Load, 0).next_u64();
        let y = Stream::new(1, Domain::Load, 1).next_u64();
        let z = Stream::new(1, Domain::Dynamics, 0).next_u64();
        let w = Stream::new(2, Domain::Load, 0).next_u64();
        assert!(x != y && x != z && x != w);
    }

    #[test]
    fn uniform_range_and_exponential_mean() {
        let mut s = Stream::new(3, Domain::Dynamics, 9);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            acc += s.exponential(2.0);
        }
        let mean = acc / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(s.exponential(0.0).is_infinite());
    }

    #[test]
    fn with_rng_keeps_counter_consistent() {
        let mut a = Stream::new(5, Domain::Load, 3);
        let _: f64 = a.with_rng(|r| r.random());
        let next = a.next_u64();
        let mut b = Stream::resume(5, Domain::Load, 3, a.draws() - 1);
        assert_eq!(b.next_u64(), next);
    }
}
