//! Single-pass moment accumulation that can be split and merged.

use serde::{Deserialize, Serialize};

/// Welford running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two disjoint sample sets (Chan et al. update).
    pub fn merge(&self, other: &Welford) -> Welford {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        Welford {
            n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Moments of `f_x`, `f_u` and `f_x − f_u` over coupled samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoupledMoments {
    pub fx: Welford,
    pub fu: Welford,
    pub diff: Welford,
}

impl CoupledMoments {
    #[inline]
    pub fn push(&mut self, fx: f64, fu: f64) {
        self.fx.push(fx);
        self.fu.push(fu);
        self.diff.push(fx - fu);
    }

    pub fn merge(&self, other: &CoupledMoments) -> CoupledMoments {
        CoupledMoments {
            fx: self.fx.merge(&other.fx),
            fu: self.fu.merge(&other.fu),
            diff: self.diff.merge(&other.diff),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (
            m,
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
        )
    }

    #[test]
    fn small_examples() {
        let w: Welford = [0.0, 2.0].into_iter().collect();
        assert_eq!(w.mean(), 1.0);
        assert_eq!(w.variance(), 2.0);
        let w: Welford = [3.0; 5].into_iter().collect();
        assert_eq!(w.variance(), 0.0);
        assert_eq!(Welford::new().merge(&w), w);
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(
            xs in proptest::collection::vec(-1e3f64..1e3, 3..200),
            cuts in proptest::collection::vec(0usize..200, 0..6),
        ) {
            let whole: Welford = xs.iter().copied().collect();
            let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % xs.len()).collect();
            bounds.push(0);
            bounds.push(xs.len());
            bounds.sort_unstable();
            let parts: Vec<Welford> = bounds.windows(2).map(|w| xs[w[0]..w[1]].iter().copied().collect()).collect();
            let fwd = parts.iter().fold(Welford::new(), |a, b| a.merge(b));
            let rev = parts.iter().rev().fold(Welford::new(), |a, b| a.merge(b));
            let (m, v) = naive(&xs);
            let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            for w in [whole, fwd, rev] {
                prop_assert_eq!(w.count(), xs.len() as u64);
                prop_assert!((w.mean() - m).abs() <= 1e-12 * scale);
                prop_assert!((w.variance() - v).abs() <= 1e-12 * scale * scale);
            }
        }
    }
}
