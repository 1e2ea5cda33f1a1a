//! Counter-based SplitMix64 streams.
//!
//! A stream is identified by `(seed, relation, attribute)`. Its key is
//! `mix(seed ^ mix(((relation + 1) << 32) | (attribute + 1)))` and the `c`-th
//! draw (`c = 1, 2, ...`) is `mix(key + c * 0x9E3779B97F4A7C15)`, where `mix`
//! is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! All arithmetic wraps modulo 2^64. Bounded draws use Lemire's
//! multiply-high method with rejection, so instances are reproducible
//! bit-for-bit on any platform.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, relation: u64, attribute: u64) -> Stream {
        let tag = ((relation.wrapping_add(1)) << 32) | (attribute.wrapping_add(1) & 0xFFFF_FFFF);
        Stream { key: mix64(seed ^ mix64(tag)), counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, bound)`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            v.swap(i, j);
        }
    }

    /// Uniformly random permutation of `1..=n`.
    pub fn permutation(&mut self, n: u64) -> Vec<u64> {
        let mut v: Vec<u64> = (1..=n).collect();
        self.shuffle(&mut v);
        v
    }

    /// `count` distinct values from `1..=n` in draw order (Floyd's algorithm
    /// followed by a shuffle).
    pub fn sample_distinct(&mut self, n: u64, count: u64) -> Vec<u64> {
        assert!(count <= n, "cannot sample {count} distinct values from {n}");
        let mut seen = std::collections::HashSet::with_capacity(count as usize);
        let mut out = Vec::with_capacity(count as usize);
        for j in (n - count + 1)..=n {
            let t = self.below(j) + 1;
            let v = if seen.contains(&t) { j } else { t };
            seen.insert(v);
            out.push(v);
        }
        self.shuffle(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_values() {
        // SplitMix64 finalizer reference value
        assert_eq!(mix64(0), 0);
        assert_eq!(mix64(GOLDEN_GAMMA), 0xE220_A839_7B1D_CDAF);
        let mut a = Stream::new(7, 0, 0);
        let mut b = Stream::new(7, 0, 0);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = Stream::new(7, 0, 1);
        assert_ne!(Stream::new(7, 0, 0).next_u64(), c.next_u64());
    }

    #[test]
    fn bounded_and_permutations() {
        let mut s = Stream::new(1, 2, 3);
        for _ in 0..1000 {
            assert!(s.below(7) < 7);
        }
        let mut p = s.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (1..=100).collect::<Vec<_>>());
        let mut d = s.sample_distinct(1000, 500);
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 500);
        assert!(d.iter().all(|&v| (1..=1000).contains(&v)));
    }
}
