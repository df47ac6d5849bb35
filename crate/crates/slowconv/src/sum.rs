//! Compensated summation primitives.
//!
//! All measures, integrals, and L1 norms in the crate reduce to sums of up
//! to [`crate::MAX_ATOMS`] doubles. Plain left-to-right accumulation loses
//! up to `n` ulps; the Neumaier variant of Kahan summation keeps the error
//! independent of `n` (one rounding of the exact sum plus a tiny constant),
//! which is what lets certificate tolerances stay at `1e-12` on
//! million-atom spaces.

/// Neumaier (improved Kahan) compensated sum of a slice, evaluated in index
/// order. Deterministic: the same slice always produces the same bits.
pub(crate) fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64; // running compensation for lost low-order bits
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Neumaier compensated sum over an iterator of terms, evaluated in
/// iteration order.
pub(crate) fn neumaier_sum_iter(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated prefix sums supporting O(1) window sums.
///
/// Entry `i` of `prefix` holds the compensated sum of `values[0..i]`; a
/// window sum over `a..b` is the single subtraction `prefix[b] - prefix[a]`.
/// For 0/1-valued inputs every prefix is an exact small integer, so window
/// sums are exact; for general inputs each window costs one extra rounding
/// on top of the compensated prefixes.
pub(crate) struct CumSum {
    prefix: Vec<f64>,
}

impl CumSum {
    /// Builds prefix sums of `values` (length `n + 1`, starting at 0).
    pub(crate) fn new(values: impl Iterator<Item = f64>, size_hint: usize) -> Self {
        let mut prefix = Vec::with_capacity(size_hint + 1);
        prefix.push(0.0);
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for v in values {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            prefix.push(sum + comp);
        }
        CumSum { prefix }
    }

    /// Sum of the underlying values over the half-open index window `a..b`.
    pub(crate) fn window(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a <= b && b < self.prefix.len());
        self.prefix[b] - self.prefix[a]
    }

    /// Number of underlying values.
    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.prefix.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sum_is_zero() {
        assert_eq!(neumaier_sum(&[]), 0.0);
    }

    #[test]
    fn recovers_cancellation_that_naive_summation_loses() {
        // 1.0 + 1e100 + 1.0 - 1e100 == 2.0 exactly; naive summation gives 0.
        let vals = [1.0, 1e100, 1.0, -1e100];
        let naive: f64 = vals.iter().sum();
        assert_eq!(naive, 0.0);
        assert_eq!(neumaier_sum(&vals), 2.0);
    }

    #[test]
    fn matches_exact_rational_sum_on_uniform_weights() {
        // 1/n added n times: compensated sum lands within one ulp of 1.
        for n in [3usize, 7, 1_000, 999_983] {
            let w = 1.0 / n as f64;
            let total = neumaier_sum_iter(std::iter::repeat(w).take(n));
            assert!((total - 1.0).abs() <= f64::EPSILON, "n = {n}: {total}");
        }
    }

    #[test]
    fn window_sums_of_indicators_are_exact_integers() {
        let bits: Vec<f64> = (0..10_000).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let cs = CumSum::new(bits.iter().copied(), bits.len());
        assert_eq!(cs.len(), bits.len());
        for (a, b) in [(0, 10_000), (17, 23), (0, 0), (9_999, 10_000), (123, 4_567)] {
            let expect: f64 = bits[a..b].iter().sum::<f64>(); // exact: integer partials
            assert_eq!(cs.window(a, b), expect);
        }
    }

    #[test]
    fn iter_and_slice_variants_agree_bitwise() {
        let vals: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.1).sin() / 7.0).collect();
        assert_eq!(neumaier_sum(&vals), neumaier_sum_iter(vals.iter().copied()));
    }
}
