//! Counter-based random streams.
//!
//! Every random draw in a run is a pure function of
//! `(master seed, stream, round, agent, arm, counter)`. Streams for the
//! environment, the adversary and each agent are disjoint, so changing
//! the adversary never shifts the rewards or the agents' pulls.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Identifies an independent random stream within one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Environment,
    Adversary,
    Agent(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Environment => 1,
            Stream::Adversary => 2,
            Stream::Agent(agent) => 16 + agent as u64,
        }
    }
}

/// SplitMix64 finalizer.
#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline(always)]
fn absorb(state: u64, word: u64) -> u64 {
    mix(state.wrapping_add(GOLDEN) ^ word)
}

/// Hashes a key tuple into a 64-bit stream key.
#[inline]
pub fn stream_key(seed: u64, stream: Stream, round: u64, agent: u64, arm: u64) -> u64 {
    let h = absorb(mix(seed ^ 0x6A09_E667_F3BC_C908), stream.id());
    let h = absorb(h, round);
    let h = absorb(h, agent);
    absorb(h, arm)
}

/// Maps 64 random bits to a double in `[0, 1)`.
#[inline(always)]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A random generator whose `n`-th output is `hash(key, n)`.
///
/// Cloning snapshots the position; two clones produce identical sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self::keyed(stream_key(seed, stream, 0, 0, 0))
    }

    /// A generator for one `(round, agent, arm)` cell of a stream.
    pub fn at(seed: u64, stream: Stream, round: u64, agent: u64, arm: u64) -> Self {
        Self::keyed(stream_key(seed, stream, round, agent, arm))
    }

    pub fn keyed(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let out = mix(self.key ^ mix(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = CounterRng::new(7, Stream::Agent(3));
        let mut b = CounterRng::new(7, Stream::Agent(3));
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_distinct() {
        let keys = [
            stream_key(1, Stream::Environment, 5, 0, 0),
            stream_key(1, Stream::Adversary, 5, 0, 0),
            stream_key(1, Stream::Agent(0), 5, 0, 0),
            stream_key(1, Stream::Agent(1), 5, 0, 0),
            stream_key(2, Stream::Environment, 5, 0, 0),
            stream_key(1, Stream::Environment, 5, 0, 1),
            stream_key(1, Stream::Environment, 5, 1, 0),
        ];
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }

    #[test]
    fn uniform_moments() {
        let mut rng = CounterRng::new(11, Stream::Environment);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            sum += u;
            sq += u * u;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        // 3 sigma on the mean, generous on the variance
        assert!((mean - 0.5).abs() < 3.0 * (1.0 / 12.0f64 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 2e-3);
    }
}
