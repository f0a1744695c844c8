//! Binary indexed tree over event rates.
//!
//! Supports O(log n) point update, total query, and inverse-CDF sampling
//! (largest index with prefix sum <= target), which is the inner loop of the
//! exact event-driven simulator. The tree is padded to a power of two so the
//! rank query is a single bit-descent.

#[derive(Debug, Clone)]
pub struct RateTree {
    /// 1-based storage; index i covers a span of `lsb(i)` leaves.
    tree: Vec<f64>,
    len: usize,
    cap: usize,
}

impl RateTree {
    pub fn new(len: usize) -> Self {
        let cap = len.next_power_of_two().max(1);
        Self {
            tree: vec![0.0; cap + 1],
            len,
            cap,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Add `delta` to the rate at `idx`.
    pub fn add(&mut self, idx: usize, delta: f64) {
        debug_assert!(idx < self.len);
        let mut i = idx + 1;
        while i <= self.cap {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of all rates.
    pub fn total(&self) -> f64 {
        self.prefix_sum(self.len)
    }

    /// Sum of rates at indices `< end`.
    pub fn prefix_sum(&self, end: usize) -> f64 {
        let mut i = end.min(self.len);
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Largest index whose prefix sum is `<= target`; the sampled channel for
    /// `target` uniform in `[0, total)`. Accumulated float error can push the
    /// descent past the last positive rate, so the result is clamped to the
    /// last in-range index.
    pub fn find(&self, mut target: f64) -> usize {
        let mut idx = 0usize;
        let mut step = self.cap;
        while step > 0 {
            let next = idx + step;
            if next <= self.cap && self.tree[next] <= target {
                target -= self.tree[next];
                idx = next;
            }
            step >>= 1;
        }
        idx.min(self.len.saturating_sub(1))
    }

    /// Overwrite every rate from `rates`, rebuilding in O(n).
    pub fn rebuild(&mut self, rates: &[f64]) {
        assert_eq!(rates.len(), self.len);
        self.tree.iter_mut().for_each(|v| *v = 0.0);
        for (i, &r) in rates.iter().enumerate() {
            self.tree[i + 1] += r;
        }
        for i in 1..=self.cap {
            let j = i + (i & i.wrapping_neg());
            if j <= self.cap {
                self.tree[j] += self.tree[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_sums_match_naive() {
        let rates = [2.0, 0.0, 1.5, 3.25, 0.25, 7.0, 0.0];
        let mut t = RateTree::new(rates.len());
        for (i, &r) in rates.iter().enumerate() {
            t.add(i, r);
        }
        let mut acc = 0.0;
        for i in 0..=rates.len() {
            assert!((t.prefix_sum(i) - acc).abs() < 1e-12);
            if i < rates.len() {
                acc += rates[i];
            }
        }
        assert!((t.total() - 14.0).abs() < 1e-12);
    }

    #[test]
    fn find_inverts_prefix_sums() {
        let rates = [2.0, 0.0, 1.5, 3.25, 0.25, 7.0];
        let mut t = RateTree::new(rates.len());
        for (i, &r) in rates.iter().enumerate() {
            t.add(i, r);
        }
        // target inside channel i must return i; channels with zero rate are
        // never returned for targets strictly inside a neighbor's span.
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(1.999), 0);
        assert_eq!(t.find(2.0), 2);
        assert_eq!(t.find(3.49), 2);
        assert_eq!(t.find(3.5), 3);
        assert_eq!(t.find(6.9), 4);
        assert_eq!(t.find(7.0), 5);
        assert_eq!(t.find(13.999), 5);
    }

    #[test]
    fn update_then_rebuild_agree() {
        let mut a = RateTree::new(10);
        let mut rates = vec![0.0; 10];
        let mut x = 1u64;
        for k in 0..200 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            let i = (x >> 33) as usize % 10;
            let delta = ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.4;
            if rates[i] + delta >= 0.0 {
                rates[i] += delta;
                a.add(i, delta);
            }
            if k % 50 == 0 {
                let mut b = RateTree::new(10);
                b.rebuild(&rates);
                assert!((a.total() - b.total()).abs() < 1e-9 * (1.0 + a.total()));
            }
        }
    }

    #[test]
    fn single_channel() {
        let mut t = RateTree::new(1);
        t.add(0, 4.0);
        assert_eq!(t.find(3.9), 0);
        assert!((t.total() - 4.0).abs() < 1e-15);
    }
}
