//! Deterministic splittable random streams.
//!
//! `RngStream` is a counter-based generator (ChaCha8 keyed by a 64-bit seed,
//! with the 64-bit stream id as the nonce). The same `(seed, stream)` pair
//! yields the identical byte sequence on every platform, and child streams
//! derived with distinct labels are statistically independent. Concurrency is
//! achieved by splitting child streams up front, never by sharing one stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// splitmix64 finalizer over a combination of parent stream and child label.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            inner,
        }
    }

    /// Derive an independent child stream. Distinct labels give independent
    /// streams; the same label always gives the same child.
    pub fn child(&self, label: u64) -> Self {
        RngStream::new(self.seed, mix(self.stream, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection (unbiased, version-stable).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.inner.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (ziggurat).
    pub fn normal(&mut self) -> f64 {
        rand::Rng::sample(&mut self.inner, rand_distr::StandardNormal)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices drawn from `0..n` (partial Fisher-Yates); order is
    /// part of the draw.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct values from 0..{n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Index drawn with probability proportional to `weights` (all finite,
    /// nonnegative, not all zero).
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        assert!(
            total > 0.0 && total.is_finite(),
            "weighted draw needs positive finite total weight"
        );
        let mut target = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            target -= w;
            if target < 0.0 {
                return i;
            }
        }
        // Rounding can leave target at ~0; fall back to the last positive weight.
        weights
            .iter()
            .rposition(|&w| w > 0.0)
            .expect("at least one positive weight")
    }

    /// Dirichlet(alpha, ..., alpha) draw of the given dimension.
    pub fn dirichlet(&mut self, alpha: f64, dim: usize) -> Vec<f64> {
        use rand_distr::Distribution;
        let gamma = rand_distr::Gamma::new(alpha, 1.0).expect("alpha > 0");
        let mut draws: Vec<f64> = (0..dim).map(|_| gamma.sample(&mut self.inner)).collect();
        let total: f64 = draws.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            // All gammas underflowed (tiny alpha): degenerate one-hot on a
            // uniformly chosen coordinate, the distribution's alpha->0 limit.
            let hot = self.below(dim);
            draws.iter_mut().for_each(|d| *d = 0.0);
            draws[hot] = 1.0;
        } else {
            draws.iter_mut().for_each(|d| *d /= total);
        }
        draws
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_identical_sequences() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn child_streams_are_reproducible_and_distinct() {
        let parent = RngStream::new(9, 3);
        let mut c0 = parent.child(0);
        let mut c0_again = parent.child(0);
        let mut c1 = parent.child(1);
        let x = c0.next_u64();
        assert_eq!(x, c0_again.next_u64());
        assert_ne!(x, c1.next_u64());
    }

    #[test]
    fn grandchildren_do_not_collide_with_children() {
        let root = RngStream::new(1, 0);
        let mut ids = std::collections::HashSet::new();
        for a in 0..20 {
            let c = root.child(a);
            assert!(ids.insert(c.stream()));
            for b in 0..20 {
                assert!(ids.insert(c.child(b).stream()), "stream id collision");
            }
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn below_is_unbiased_over_small_range() {
        let mut r = RngStream::new(5, 5);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[r.below(3)] += 1;
        }
        for &c in &counts {
            assert!((8_000..12_000).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut r = RngStream::new(11, 0);
        for &alpha in &[0.01, 1.0, 100.0] {
            let w = r.dirichlet(alpha, 4);
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn sample_distinct_yields_distinct() {
        let mut r = RngStream::new(2, 2);
        let s = r.sample_distinct(10, 6);
        let set: std::collections::HashSet<_> = s.iter().collect();
        assert_eq!(set.len(), 6);
        assert!(s.iter().all(|&i| i < 10));
    }
}
