//! Deterministic low-discrepancy sampling for hypothesis checks.
//!
//! Halton sequences with the first prime bases: same inputs, same points, on
//! every platform. The quotient estimators that consume these points (sampled
//! Lipschitz constants, monotonicity margins) only need good box coverage,
//! not randomness.

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// k-th element (k >= 0) of the van der Corput sequence in the given base,
/// in (0, 1). Index 0 maps to k=1 internally so 0.0 itself never appears.
pub fn van_der_corput(mut k: u64, base: u64) -> f64 {
    k += 1;
    let mut value = 0.0;
    let mut denom = 1.0;
    while k > 0 {
        denom *= base as f64;
        value += (k % base) as f64 / denom;
        k /= base;
    }
    value
}

/// Deterministic sequence of points in an axis-aligned box.
#[derive(Debug, Clone)]
pub struct Halton {
    lo: Vec<f64>,
    hi: Vec<f64>,
    index: u64,
}

impl Halton {
    /// Panics if the box has more than 8 dimensions or inverted bounds.
    pub fn new(lo: &[f64], hi: &[f64]) -> Halton {
        assert!(lo.len() == hi.len() && lo.len() <= PRIMES.len());
        assert!(lo.iter().zip(hi).all(|(a, b)| a <= b));
        Halton {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            index: 0,
        }
    }

    pub fn skip(mut self, n: u64) -> Halton {
        self.index += n;
        self
    }
}

impl Iterator for Halton {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let k = self.index;
        self.index += 1;
        Some(
            self.lo
                .iter()
                .zip(&self.hi)
                .enumerate()
                .map(|(d, (lo, hi))| lo + (hi - lo) * van_der_corput(k, PRIMES[d]))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_base_two_prefix() {
        let got: Vec<f64> = (0..7).map(|k| van_der_corput(k, 2)).collect();
        assert_eq!(got, vec![0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875]);
    }

    #[test]
    fn points_stay_in_box_and_cover_it() {
        let pts: Vec<Vec<f64>> = Halton::new(&[-1.0, 0.0], &[1.0, 2.0]).take(512).collect();
        assert!(pts
            .iter()
            .all(|p| (-1.0..=1.0).contains(&p[0]) && (0.0..=2.0).contains(&p[1])));
        // Every quadrant of the box gets its share.
        let q = pts.iter().filter(|p| p[0] < 0.0 && p[1] < 1.0).count();
        assert!((96..160).contains(&q), "{q}");
    }

    #[test]
    fn deterministic() {
        let a: Vec<Vec<f64>> = Halton::new(&[0.0], &[1.0]).take(16).collect();
        let b: Vec<Vec<f64>> = Halton::new(&[0.0], &[1.0]).take(16).collect();
        assert_eq!(a, b);
    }
}
