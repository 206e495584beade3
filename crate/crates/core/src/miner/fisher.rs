//! One-sided Fisher exact test for positive association in a 2×2 table.

use std::sync::OnceLock;

/// `ln(i!)` for `i` in `0..=n`, extended on demand.
#[derive(Debug, Clone)]
pub struct LnFactorials {
    table: Vec<f64>,
}

impl LnFactorials {
    pub fn new(n: usize) -> Self {
        let mut table = Vec::with_capacity(n + 1);
        table.push(0.0);
        for i in 1..=n {
            let prev = table[i - 1];
            table.push(prev + (i as f64).ln());
        }
        LnFactorials { table }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.table[i]
    }

    pub fn capacity(&self) -> usize {
        self.table.len() - 1
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.get(n) - self.get(k) - self.get(n - k)
    }

    /// `P(X >= npq)` for `X ~ Hypergeometric(population n, successes nq,
    /// draws np)`, i.e. the chance of seeing at least this many class-`q`
    /// rows among the `np` rows covered by the antecedent.
    pub fn p_value(&self, n: usize, np: usize, nq: usize, npq: usize) -> f64 {
        assert!(np <= n && nq <= n && npq <= np.min(nq), "inconsistent 2x2 counts");
        assert!(n <= self.capacity(), "factorial table too small");
        let lo = (np + nq).saturating_sub(n);
        let hi = np.min(nq);
        if npq <= lo {
            return 1.0;
        }
        let ln_total = self.ln_choose(n, np);
        let ln_pmf = |x: usize| self.ln_choose(nq, x) + self.ln_choose(n - nq, np - x) - ln_total;
        // sum the upper tail relative to its first term, then rescale
        let mut term = 1.0;
        let mut sum = 1.0;
        for x in npq..hi {
            let ratio = ((nq - x) * (np - x)) as f64 / ((x + 1) * (n + x + 1 - nq - np)) as f64;
            term *= ratio;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        (ln_pmf(npq).exp() * sum).min(1.0)
    }
}

fn shared() -> &'static LnFactorials {
    static TABLE: OnceLock<LnFactorials> = OnceLock::new();
    TABLE.get_or_init(|| LnFactorials::new(4096))
}

/// Convenience wrapper over a process-wide table; falls back to a fresh
/// table for very large `n`.
pub fn fisher_one_sided(n: usize, np: usize, nq: usize, npq: usize) -> f64 {
    let t = shared();
    if n <= t.capacity() {
        t.p_value(n, np, nq, npq)
    } else {
        LnFactorials::new(n).p_value(n, np, nq, npq)
    }
}
