//! Deterministic, labeled random streams.
//!
//! Every random decision in the crate is drawn from a [`RngStream`] identified
//! by `(seed, label)`. The generator is SplitMix64, and the derivations below
//! are pinned so that an independent implementation reproduces every sequence
//! bit for bit:
//!
//! * stream state: `state = seed ^ fnv1a64(label bytes)`
//! * uniform double in `[0,1)`: `(next_u64() >> 11) * 2^-53`
//! * integer in `{0..n-1}`: `next_u64() % n` (modulo bias < 2^-60 for the
//!   spans used here)
//! * standard Gaussian: Box-Muller, `sqrt(-2 ln u1) * cos(2 pi u2)` with
//!   `u1 = ((next_u64() >> 11) + 1) * 2^-53` in `(0,1]`, consuming exactly
//!   two raw draws per sample

/// One SplitMix64 step: returns `(output, new_state)`.
pub fn splitmix64_next(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), state)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A named deterministic random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        RngStream {
            state: seed ^ fnv1a64(label.as_bytes()),
            label: label.to_string(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        let (out, next) = splitmix64_next(self.state);
        self.state = next;
        out
    }

    /// Uniform double in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * 2f64.powi(-53)
    }

    /// Uniform double in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Uniform integer in `{0, .., n-1}`.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        self.next_u64() % n
    }

    /// Standard Gaussian via Box-Muller; consumes exactly two raw draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * 2f64.powi(-53); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle (descending index, `j = draw % (i+1)`).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_trace() {
        // Frozen from an independent implementation of the pinned algorithm.
        let (o1, s1) = splitmix64_next(0);
        assert_eq!(o1, 0xE220_A839_7B1D_CDAF);
        let (o2, _) = splitmix64_next(s1);
        assert_eq!(o2, 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(42, "x");
        let mut b = RngStream::new(42, "x");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(42, "y");
        assert_ne!(RngStream::new(42, "x").next_u64(), c.next_u64());
    }

    #[test]
    fn uniform_mean() {
        let mut s = RngStream::new(12345, "");
        // label "" keeps state = seed ^ fnv_offset_basis; the mean check only
        // needs a long stream.
        let mut acc = 0.0;
        for _ in 0..100_000 {
            acc += s.next_f64();
        }
        let mean = acc / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gaussian_moments() {
        let mut s = RngStream::new(7, "gauss");
        let (mut m1, mut m2) = (0.0, 0.0);
        let n = 100_000;
        for _ in 0..n {
            let z = s.next_gaussian();
            m1 += z;
            m2 += z * z;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 0.02, "mean {m1}");
        assert!((m2 - 1.0).abs() < 0.03, "var {m2}");
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut s = RngStream::new(3, "shuffle");
        let mut v: Vec<usize> = (0..50).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
