//! Branch-and-bound search for the k best rules of one class.
//!
//! Antecedents grow depth first. At every node the possible extensions are
//! scored with an optimistic bound and explored best bound first; extension
//! `i` may only be combined with extensions ranked after it, so each
//! antecedent is reached exactly once. A bound below the current k-th score
//! removes the extension from the whole subtree.

use std::cmp::Ordering;

use super::fisher::fisher_one_sided;
use super::metrics::{Counts, Ratios, RuleMetrics};
use super::{Atom, MiningConfig, MiningData, Objective, RowSet, Rule};

struct Entry {
    score: f64,
    atoms: Vec<usize>,
    counts: Counts,
    ratios: Ratios,
    fisher_p: f64,
}

/// `Less` means `a` ranks ahead of `b`.
fn rank(a_score: f64, a_atoms: &[usize], b_score: f64, b_atoms: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a_atoms.len().cmp(&b_atoms.len()))
        .then_with(|| a_atoms.cmp(b_atoms))
}

struct TopK {
    k: usize,
    entries: Vec<Entry>,
}

impl TopK {
    fn threshold(&self) -> f64 {
        if self.entries.len() < self.k {
            f64::NEG_INFINITY
        } else {
            self.entries[self.k - 1].score
        }
    }

    fn admits(&self, score: f64, atoms: &[usize]) -> bool {
        self.entries.len() < self.k || {
            let worst = &self.entries[self.k - 1];
            rank(score, atoms, worst.score, &worst.atoms) == Ordering::Less
        }
    }

    fn insert(&mut self, e: Entry) {
        let at = self
            .entries
            .partition_point(|x| rank(x.score, &x.atoms, e.score, &e.atoms) == Ordering::Less);
        self.entries.insert(at, e);
        self.entries.truncate(self.k);
    }
}

/// Upper bound on the objective over every admissible antecedent that
/// extends one covering `np` rows, `npq` of them in the class.
fn bound(obj: Objective, np: usize, npq: usize, nq: usize, n: usize, cfg: &MiningConfig) -> f64 {
    let (n, np, npq, nq) = (n as f64, np as f64, npq as f64, nq as f64);
    let prior = nq / n;
    let least_np = npq.max(cfg.min_coverage_count as f64);
    let conf_m = (npq + cfg.m * prior) / (least_np + cfg.m);
    let b = match obj {
        Objective::Support => npq / n,
        Objective::Coverage => np / n,
        Objective::Confidence => conf_m,
        Objective::Lift => {
            if nq == 0.0 {
                0.0
            } else {
                conf_m / prior
            }
        }
        Objective::Leverage => (npq - least_np * prior) / n,
    };
    // absorb rounding differences against the exactly computed score
    b + b.abs() * 1e-9 + 1e-12
}

struct Child {
    atom: usize,
    rows: RowSet,
    np: usize,
    npq: usize,
    bound: f64,
}

struct Search<'a> {
    data: &'a MiningData,
    cfg: &'a MiningConfig,
    class: usize,
    nq: usize,
    top: TopK,
}

impl Search<'_> {
    fn expand(&mut self, rows: &RowSet, prefix: &[usize], candidates: &[usize]) {
        let n = self.data.n();
        let class_rows = self.data.class_rows(self.class);
        let mut children: Vec<Child> = Vec::new();
        for &a in candidates {
            let sub = rows.and(self.data.atom_rows(a));
            let np = sub.count();
            if np < self.cfg.min_coverage_count {
                continue;
            }
            let npq = sub.count_and(class_rows);
            let b = bound(self.cfg.objective, np, npq, self.nq, n, self.cfg);
            if b < self.top.threshold() {
                continue;
            }
            children.push(Child {
                atom: a,
                rows: sub,
                np,
                npq,
                bound: b,
            });
        }
        children.sort_by(|x, y| y.bound.total_cmp(&x.bound).then(x.atom.cmp(&y.atom)));

        for i in 0..children.len() {
            let child = &children[i];
            if child.bound < self.top.threshold() {
                break;
            }
            let mut atoms = prefix.to_vec();
            let pos = atoms.partition_point(|&x| x < child.atom);
            atoms.insert(pos, child.atom);

            let counts = Counts {
                n,
                np: child.np,
                nq: self.nq,
                npq: child.npq,
            };
            let ratios = Ratios::from_counts(counts, self.cfg.m);
            let score = self.cfg.objective.score(&ratios);
            if self.top.admits(score, &atoms) {
                let fisher_p = fisher_one_sided(n, child.np, self.nq, child.npq);
                if fisher_p <= self.cfg.fisher_alpha {
                    self.top.insert(Entry {
                        score,
                        atoms: atoms.clone(),
                        counts,
                        ratios,
                        fisher_p,
                    });
                }
            }

            if atoms.len() < self.cfg.max_antecedent_len {
                let column = self.data.atoms()[child.atom].column;
                let threshold = self.top.threshold();
                let next: Vec<usize> = children[i + 1..]
                    .iter()
                    .filter(|c| c.bound >= threshold && self.data.atoms()[c.atom].column != column)
                    .map(|c| c.atom)
                    .collect();
                if !next.is_empty() {
                    self.expand(&children[i].rows, &atoms, &next);
                }
            }
        }
    }
}

/// The top `config.k` admissible rules predicting `class`, best first.
pub fn mine_class(data: &MiningData, config: &MiningConfig, class: usize) -> Vec<Rule> {
    let mut search = Search {
        data,
        cfg: config,
        class,
        nq: data.class_count(class),
        top: TopK {
            k: config.k,
            entries: Vec::with_capacity(config.k + 1),
        },
    };
    let all: Vec<usize> = (0..data.atoms().len()).collect();
    search.expand(&data.full_rows(), &[], &all);
    search
        .top
        .entries
        .into_iter()
        .map(|e| {
            let atoms: Vec<Atom> = e.atoms.iter().map(|&i| data.atoms()[i]).collect();
            let metrics = RuleMetrics::from_ratios(e.ratios, e.counts, e.fisher_p);
            debug_assert_eq!(config.objective.score(&e.ratios), e.score);
            data.assemble(&atoms, class, metrics)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, ColumnSpec, DatasetSchema, Instance};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, cols: usize, cats: u32, rows: usize, classes: u32) -> MiningData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns: Vec<ColumnSpec> = (0..cols)
            .map(|c| ColumnSpec::categorical(format!("c{c}"), (0..cats).map(|v| format!("v{v}"))))
            .collect();
        columns.push(ColumnSpec::categorical("y", (0..classes).map(|v| format!("k{v}"))));
        let schema = DatasetSchema::new(columns, "y").unwrap();
        let mut data_rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..rows {
            let mut values: Vec<Cell> = (0..cols).map(|_| Cell::Cat(rng.gen_range(0..cats))).collect();
            // make the label depend on the first column so that rules exist
            let y = if let Cell::Cat(v) = values[0] {
                if rng.gen_bool(0.7) {
                    v % classes
                } else {
                    rng.gen_range(0..classes)
                }
            } else {
                0
            };
            values.push(Cell::Missing);
            data_rows.push(Instance::new(values));
            labels.push(y as usize);
        }
        MiningData::new(schema, vec![None; cols + 1], data_rows, labels).unwrap()
    }

    /// Enumerates every antecedent, scoring with a plain row scan.
    fn brute(data: &MiningData, cfg: &MiningConfig, class: usize) -> Vec<(Vec<Atom>, f64)> {
        fn rec(atoms: &[Atom], start: usize, cur: &mut Vec<Atom>, max: usize, out: &mut Vec<Vec<Atom>>) {
            for i in start..atoms.len() {
                if cur.iter().any(|a| a.column == atoms[i].column) {
                    continue;
                }
                cur.push(atoms[i]);
                out.push(cur.clone());
                if cur.len() < max {
                    rec(atoms, i + 1, cur, max, out);
                }
                cur.pop();
            }
        }
        let mut all = Vec::new();
        rec(data.atoms(), 0, &mut Vec::new(), cfg.max_antecedent_len, &mut all);
        let mut scored: Vec<(Vec<Atom>, f64)> = all
            .into_iter()
            .filter_map(|a| {
                let c = data.counts(&a, class);
                if c.np < cfg.min_coverage_count {
                    return None;
                }
                let m = RuleMetrics::compute(c, cfg.m).unwrap();
                (m.fisher_p <= cfg.fisher_alpha).then(|| (a, cfg.objective.score_metrics(&m)))
            })
            .collect();
        scored.sort_by(|x, y| {
            y.1.total_cmp(&x.1)
                .then(x.0.len().cmp(&y.0.len()))
                .then_with(|| x.0.cmp(&y.0))
        });
        scored.truncate(cfg.k);
        scored
    }

    fn check(seed: u64, cfg: &MiningConfig) {
        let data = random_data(seed, 5, 3, 60, 2);
        for class in 0..2 {
            let got: Vec<(Vec<Atom>, f64)> = mine_class(&data, cfg, class)
                .iter()
                .map(|r| (r.atoms(), r.score(cfg.objective)))
                .collect();
            assert_eq!(got, brute(&data, cfg, class), "seed {seed} class {class} {cfg:?}");
        }
    }

    #[test]
    fn eight_row_lift_example() {
        let data = random_data(3, 3, 2, 8, 2);
        let cfg = MiningConfig {
            k: 3,
            objective: Objective::Lift,
            max_antecedent_len: 2,
            min_coverage_count: 1,
            fisher_alpha: 1.0,
            m: 0.0,
            target_classes: None,
        };
        for class in 0..2 {
            let got: Vec<_> = mine_class(&data, &cfg, class)
                .iter()
                .map(|r| (r.atoms(), r.score(cfg.objective)))
                .collect();
            assert_eq!(got.len(), 3);
            assert_eq!(got, brute(&data, &cfg, class));
        }
    }

    #[test]
    fn matches_brute_force_for_every_objective() {
        for seed in 0..10 {
            for objective in Objective::ALL {
                let cfg = MiningConfig {
                    k: 4,
                    objective,
                    max_antecedent_len: 3,
                    min_coverage_count: 3,
                    ..Default::default()
                };
                check(seed, &cfg);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn search_equals_enumeration(
            seed in any::<u64>(),
            k in 1usize..6,
            obj in 0usize..5,
            max_len in 1usize..4,
            min_cov in 1usize..6,
            alpha in prop::sample::select(vec![0.01, 0.05, 1.0]),
            m in prop::sample::select(vec![0.0, 2.0, 5.0]),
        ) {
            let cfg = MiningConfig {
                k,
                objective: Objective::ALL[obj],
                max_antecedent_len: max_len,
                min_coverage_count: min_cov,
                fisher_alpha: alpha,
                m,
                target_classes: None,
            };
            check(seed, &cfg);
        }

        #[test]
        fn adding_an_atom_never_raises_support_or_coverage(seed in any::<u64>(), i in 0usize..15, j in 0usize..15) {
            let data = random_data(seed, 5, 3, 40, 2);
            let atoms = data.atoms();
            let (a, b) = (atoms[i % atoms.len()], atoms[j % atoms.len()]);
            prop_assume!(a.column != b.column);
            for class in 0..2 {
                let one = data.counts(&[a], class);
                let two = data.counts(&[a, b], class);
                prop_assert!(two.np <= one.np && two.npq <= one.npq);
            }
        }
    }

    #[test]
    fn scores_non_increasing_and_bounded_by_k() {
        let data = random_data(11, 6, 3, 120, 3);
        for objective in Objective::ALL {
            let cfg = MiningConfig {
                k: 7,
                objective,
                fisher_alpha: 1.0,
                ..Default::default()
            };
            for class in 0..3 {
                let rules = mine_class(&data, &cfg, class);
                assert!(rules.len() <= 7);
                assert!(rules.windows(2).all(|w| w[0].score(objective) >= w[1].score(objective)));
            }
        }
    }
}
