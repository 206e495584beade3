//! Rule quality measures computed from the four contingency counts.

use serde::{Deserialize, Serialize};

use super::fisher::fisher_one_sided;
use crate::error::{Error, Result};

/// Contingency counts of a rule `p ⇒ q` over `n` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub n: usize,
    /// Rows matching the antecedent.
    pub np: usize,
    /// Rows of the consequent class.
    pub nq: usize,
    /// Rows matching both.
    pub npq: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics {
    pub support: f64,
    pub coverage: f64,
    pub confidence: f64,
    pub lift: f64,
    pub leverage: f64,
    pub confidence_m: f64,
    pub lift_m: f64,
    pub fisher_p: f64,
    pub counts: Counts,
}

/// Ratio measures without the Fisher p-value, which is costlier and only
/// needed for rules that could make the top-k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub support: f64,
    pub coverage: f64,
    pub confidence: f64,
    pub lift: f64,
    pub leverage: f64,
    pub confidence_m: f64,
    pub lift_m: f64,
}

impl Ratios {
    /// Requires `n > 0` and `np > 0`. `lift` and `lift_m` are 0 when the
    /// class is absent.
    ///
    /// Every ratio is a single division of exactly representable operands
    /// (for integral `m`), so equal fractions give bit-identical scores and
    /// ties rank by the documented tie-break.
    pub fn from_counts(c: Counts, m: f64) -> Ratios {
        let (n, np, nq, npq) = (c.n as f64, c.np as f64, c.nq as f64, c.npq as f64);
        let smoothed = npq * n + m * nq;
        let (lift, lift_m) = if c.nq == 0 {
            (0.0, 0.0)
        } else {
            (npq * n / (np * nq), smoothed / ((np + m) * nq))
        };
        Ratios {
            support: npq / n,
            coverage: np / n,
            confidence: npq / np,
            lift,
            leverage: (npq * n - np * nq) / (n * n),
            confidence_m: smoothed / (n * (np + m)),
            lift_m,
        }
    }
}

impl RuleMetrics {
    pub fn compute(c: Counts, m: f64) -> Result<RuleMetrics> {
        if c.n == 0 {
            return Err(Error::EmptyData);
        }
        if c.np == 0 {
            return Err(Error::ZeroCoverage);
        }
        let r = Ratios::from_counts(c, m);
        Ok(RuleMetrics::from_ratios(r, c, fisher_one_sided(c.n, c.np, c.nq, c.npq)))
    }

    pub(crate) fn from_ratios(r: Ratios, counts: Counts, fisher_p: f64) -> RuleMetrics {
        RuleMetrics {
            support: r.support,
            coverage: r.coverage,
            confidence: r.confidence,
            lift: r.lift,
            leverage: r.leverage,
            confidence_m: r.confidence_m,
            lift_m: r.lift_m,
            fisher_p,
            counts,
        }
    }

    pub fn class_prior(&self) -> f64 {
        self.counts.nq as f64 / self.counts.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(n: usize, np: usize, nq: usize, npq: usize) -> Counts {
        Counts { n, np, nq, npq }
    }

    #[test]
    fn hand_counted_example() {
        let r = RuleMetrics::compute(counts(10, 4, 5, 4), 2.0).unwrap();
        assert!((r.support - 0.4).abs() < 1e-15);
        assert!((r.coverage - 0.4).abs() < 1e-15);
        assert_eq!(r.confidence, 1.0);
        assert!((r.lift - 2.0).abs() < 1e-15);
        assert!((r.leverage - 0.2).abs() < 1e-15);
        assert!((r.confidence_m - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.lift_m - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn independence_gives_unit_lift() {
        let r = RuleMetrics::compute(counts(100, 40, 50, 20), 0.0).unwrap();
        assert!((r.lift - 1.0).abs() < 1e-15);
        assert!(r.leverage.abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(RuleMetrics::compute(counts(0, 0, 0, 0), 2.0), Err(Error::EmptyData)));
        assert!(matches!(RuleMetrics::compute(counts(5, 0, 2, 0), 2.0), Err(Error::ZeroCoverage)));
        let r = RuleMetrics::compute(counts(5, 2, 0, 0), 2.0).unwrap();
        assert_eq!((r.lift, r.lift_m, r.confidence_m), (0.0, 0.0, 0.0));
    }
}
