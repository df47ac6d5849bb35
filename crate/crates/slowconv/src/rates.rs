//! Target rate sequences `a_n` that the pipelines must beat.
//!
//! A rate is a positive, nonincreasing sequence indexed from `n = 1`. The
//! constructions only ever need finitely many values, so a rate is either a
//! closed form evaluated on demand or an explicit finite table (whose last
//! value extends to larger `n`, keeping the sequence nonincreasing).

use crate::{Error, Result};

/// A positive nonincreasing sequence `a_n`, indexed from 1.
#[derive(Debug, Clone)]
pub enum RateSeq {
    /// `a_n = n^{-alpha}` with `alpha > 0`.
    Power { alpha: f64 },
    /// `a_n = (ln(n + 2))^{-alpha}` with `alpha > 0` (natural logarithm;
    /// the `+ 2` keeps `a_1` finite and positive).
    LogPow { alpha: f64 },
    /// Explicit values for `n = 1 ..= len`; beyond the table the last value
    /// repeats.
    Table { values: Vec<f64> },
}

impl RateSeq {
    /// `a_n = n^{-alpha}`.
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power rate exponent must be finite and positive, got {alpha}"
            )));
        }
        Ok(RateSeq::Power { alpha })
    }

    /// `a_n = (ln(n + 2))^{-alpha}`.
    pub fn log_pow(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "logarithmic rate exponent must be finite and positive, got {alpha}"
            )));
        }
        Ok(RateSeq::LogPow { alpha })
    }

    /// Explicit table of values for `n = 1 ..= values.len()`; must be
    /// positive, finite, and nonincreasing.
    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("rate table is empty".into()));
        }
        if let Some((i, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "rate table entry {i} is {v}; rates must be finite and positive"
            )));
        }
        if let Some(i) = (1..values.len()).find(|&i| values[i] > values[i - 1]) {
            return Err(Error::InvalidArgument(format!(
                "rate table increases at n = {}: {} > {}",
                i + 1,
                values[i],
                values[i - 1]
            )));
        }
        Ok(RateSeq::Table { values })
    }

    /// `a_n` for `n ≥ 1`.
    pub fn at(&self, n: usize) -> f64 {
        assert!(n >= 1, "rates are indexed from 1");
        match self {
            RateSeq::Power { alpha } => (n as f64).powf(-alpha),
            RateSeq::LogPow { alpha } => ((n + 2) as f64).ln().powf(-alpha),
            RateSeq::Table { values } => values[(n - 1).min(values.len() - 1)],
        }
    }

    /// The smallest `n ≥ lo` with `a_n < bound` (strict), or an
    /// infeasibility error if none exists up to `limit`. Monotonicity makes
    /// a linear scan from `lo` with doubling probes unnecessary; the scan
    /// is a plain binary search over `[lo, limit]`.
    pub fn first_below(&self, bound: f64, lo: usize, limit: usize) -> Result<usize> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rate bound must be finite and positive, got {bound}"
            )));
        }
        let lo = lo.max(1);
        if lo > limit {
            return Err(Error::InvalidArgument(format!(
                "empty search range {lo} ..= {limit}"
            )));
        }
        if self.at(limit) >= bound {
            return Err(Error::Infeasible(format!(
                "the rate never drops below {bound} for n ≤ {limit} (a_{limit} = {})",
                self.at(limit)
            )));
        }
        // Invariant: at(hi) < bound ≤ at(lo) possible; find first below.
        let (mut a, mut b) = (lo, limit);
        if self.at(a) < bound {
            return Ok(a);
        }
        // at(a) ≥ bound > at(b): bisect for the boundary.
        while b - a > 1 {
            let mid = a + (b - a) / 2;
            if self.at(mid) < bound {
                b = mid;
            } else {
                a = mid;
            }
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_evaluate_and_decrease() {
        let p = RateSeq::power(0.5).unwrap();
        assert_eq!(p.at(1), 1.0);
        assert_eq!(p.at(4), 0.5);
        let l = RateSeq::log_pow(1.0).unwrap();
        assert!((l.at(1) - 1.0 / 3f64.ln()).abs() < 1e-15);
        assert!((l.at(98) - 1.0 / 100f64.ln()).abs() < 1e-15);
        for r in [&p, &l] {
            for n in 1..200 {
                assert!(r.at(n + 1) <= r.at(n));
                assert!(r.at(n) > 0.0);
            }
        }
    }

    #[test]
    fn tables_validate_and_extend() {
        let t = RateSeq::table(vec![1.0, 0.5, 0.5, 0.25]).unwrap();
        assert_eq!(t.at(2), 0.5);
        assert_eq!(t.at(4), 0.25);
        assert_eq!(t.at(100), 0.25);
        assert!(RateSeq::table(vec![]).is_err());
        assert!(RateSeq::table(vec![0.5, 0.75]).is_err());
        assert!(RateSeq::table(vec![0.5, 0.0]).is_err());
        assert!(RateSeq::power(0.0).is_err());
        assert!(RateSeq::log_pow(f64::NAN).is_err());
    }

    #[test]
    fn first_below_finds_the_boundary() {
        let p = RateSeq::power(1.0).unwrap(); // a_n = 1/n
        assert_eq!(p.first_below(0.1, 1, 1000).unwrap(), 11);
        assert_eq!(p.first_below(0.1, 50, 1000).unwrap(), 50);
        assert_eq!(p.first_below(2.0, 1, 1000).unwrap(), 1);
        assert!(matches!(
            p.first_below(1e-6, 1, 1000),
            Err(Error::Infeasible(_))
        ));
        // Flat tail: a table that never drops below the bound.
        let t = RateSeq::table(vec![0.5, 0.5]).unwrap();
        assert!(t.first_below(0.5, 1, 10_000).is_err());
        assert_eq!(t.first_below(0.6, 1, 10_000).unwrap(), 1);
    }
}
