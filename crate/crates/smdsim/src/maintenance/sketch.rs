//! Set-membership and frequency sketches used by the refresh and RowHammer
//! mechanisms: a plain Bloom filter for weak rows and a pair of counting
//! Bloom filters tracking activation counts over a rolling window.

use serde::{Deserialize, Serialize};

/// k independently seeded 64-bit mixers derive the probe positions. Plain
/// double hashing (h1 + i*h2) measurably inflates the false-positive rate at
/// these filter sizes because the probes form an arithmetic progression, so
/// each position gets its own mix.
fn mix(seed: u64, x: u64) -> u64 {
    // splitmix64 finalizer over a seeded input.
    let mut z = x.wrapping_add(seed).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn probe_positions(m: usize, k: u32, seed: u64, x: u64) -> impl Iterator<Item = usize> {
    (0..u64::from(k))
        .map(move |i| (mix(seed ^ i.wrapping_mul(0xd6e8_feb8_6659_fd93), x) % m as u64) as usize)
}

/// Bloom filter with m bits and k seeded hash functions. No false negatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BloomFilter {
    m: usize,
    k: u32,
    seed: u64,
    bits: Vec<u64>,
}

impl BloomFilter {
    pub fn new(m: usize, k: u32, seed: u64) -> Self {
        assert!(m > 0 && k > 0);
        BloomFilter {
            m,
            k,
            seed,
            bits: vec![0; m.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, x: u64) {
        for pos in probe_positions(self.m, self.k, self.seed, x) {
            self.bits[pos / 64] |= 1 << (pos % 64);
        }
    }

    pub fn query(&self, x: u64) -> bool {
        probe_positions(self.m, self.k, self.seed, x)
            .all(|pos| self.bits[pos / 64] >> (pos % 64) & 1 == 1)
    }
}

/// One counting Bloom filter: an array of saturating 16-bit counters.
/// `estimate(x)` never under-counts the insertions of `x` since the last
/// clear.
#[derive(Debug, Clone)]
pub struct CountingBloomFilter {
    m: usize,
    k: u32,
    seed: u64,
    counters: Vec<u16>,
}

impl CountingBloomFilter {
    pub fn new(m: usize, k: u32, seed: u64) -> Self {
        CountingBloomFilter {
            m,
            k,
            seed,
            counters: vec![0; m],
        }
    }

    pub fn insert(&mut self, x: u64) {
        for pos in probe_positions(self.m, self.k, self.seed, x) {
            let c = &mut self.counters[pos];
            *c = c.saturating_add(1);
        }
    }

    pub fn estimate(&self, x: u64) -> u32 {
        probe_positions(self.m, self.k, self.seed, x)
            .map(|pos| u32::from(self.counters[pos]))
            .min()
            .unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.counters.fill(0);
    }
}

/// Two CBFs in time-interleaved roles over a rolling window of `window`
/// cycles: inserts go to both, queries read the active one, and every half
/// window the active filter is cleared and the roles swap.
#[derive(Debug, Clone)]
pub struct CbfPair {
    filters: [CountingBloomFilter; 2],
    active: usize,
    half_window: u64,
    next_swap: u64,
}

impl CbfPair {
    pub fn new(m: usize, k: u32, seed: u64, window: u64) -> Self {
        let half = (window / 2).max(1);
        CbfPair {
            filters: [
                CountingBloomFilter::new(m, k, seed),
                CountingBloomFilter::new(m, k, seed ^ 0x51ed_270b),
            ],
            active: 0,
            half_window: half,
            next_swap: half,
        }
    }

    pub fn insert(&mut self, x: u64) {
        self.filters[0].insert(x);
        self.filters[1].insert(x);
    }

    pub fn estimate_active(&self, x: u64) -> u32 {
        self.filters[self.active].estimate(x)
    }

    /// Advances the half-window timer; clears and swaps when it expires.
    pub fn tick(&mut self, now: u64) {
        while now >= self.next_swap {
            self.filters[self.active].clear();
            self.active ^= 1;
            self.next_swap += self.half_window;
        }
    }
}
