//! Rounding tables to their maximal entries and solving the resulting CSP.
//!
//! A component of the mask is active when it is maximal in its table (up to
//! `eps`). An assignment solves the CSP when every unary and every factor
//! component it selects is active.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Assignment, Hypergraph, Model, Potentials};

/// Band used for masks of converged floating-point states.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Default cap on the number of returned solutions.
pub const DEFAULT_LIMIT: usize = 1_000_000;
/// Default cap on search nodes before the search gives up.
pub const DEFAULT_NODE_BUDGET: u64 = 20_000_000;

/// Boolean tables marking the active (maximal) components.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActiveMask {
    pub unary: Vec<Vec<bool>>,
    pub factors: Vec<Vec<bool>>,
}

impl ActiveMask {
    /// Hex SHA-256 over the concatenated tables, for cheap change detection.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (tag, tables) in [(b'u', &self.unary), (b'f', &self.factors)] {
            for t in tables {
                h.update([tag]);
                h.update((t.len() as u64).to_le_bytes());
                h.update(t.iter().map(|&b| b as u8).collect::<Vec<_>>());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Number of components that differ from `other`.
    pub fn hamming(&self, other: &ActiveMask) -> usize {
        let count = |a: &[Vec<bool>], b: &[Vec<bool>]| {
            a.iter()
                .zip(b)
                .flat_map(|(x, y)| x.iter().zip(y))
                .filter(|(p, q)| p != q)
                .count()
        };
        count(&self.unary, &other.unary) + count(&self.factors, &other.factors)
    }
}

/// Marks entries with `value >= table max - eps`.
pub fn active_mask(p: &Potentials, eps: f64) -> Result<ActiveMask> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Usage(format!("eps must be >= 0, got {eps}")));
    }
    let round = |kind: &str, tables: &[Vec<f64>]| -> Result<Vec<Vec<bool>>> {
        tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Err(Error::Validation(format!("{kind} table {i} is entirely -inf")));
                }
                Ok(t.iter().map(|&x| x >= m - eps).collect())
            })
            .collect()
    };
    Ok(ActiveMask {
        unary: round("unary", &p.unary)?,
        factors: round("factor", &p.factors)?,
    })
}

/// Solutions found by [`solve_csp`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CspSolutions {
    /// Solutions in lexicographic order.
    pub assignments: Vec<Assignment>,
    /// The search stopped early (solution limit or node budget); more solutions may exist.
    pub truncated: bool,
}

impl CspSolutions {
    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// All assignments satisfying the mask, up to `limit`.
pub fn solve_csp(h: &Hypergraph, c: &ActiveMask, limit: usize) -> Result<CspSolutions> {
    solve_csp_with_budget(h, c, limit, DEFAULT_NODE_BUDGET)
}

/// [`solve_csp`] with an explicit cap on visited search nodes.
pub fn solve_csp_with_budget(
    h: &Hypergraph,
    c: &ActiveMask,
    limit: usize,
    node_budget: u64,
) -> Result<CspSolutions> {
    check_shapes(h, c)?;
    let mut search = Search {
        h,
        c,
        limit,
        budget: node_budget,
        alive: c.unary.clone(),
        trail: Vec::new(),
        x: vec![0; h.num_vars()],
        out: Vec::new(),
        truncated: false,
    };
    if h.num_vars() > 0 {
        search.assign(0);
    } else {
        search.out.push(Vec::new());
    }
    Ok(CspSolutions {
        assignments: search.out,
        truncated: search.truncated,
    })
}

/// Rounds `tables` with `eps` and solves the CSP over `m`'s hypergraph.
pub fn decode_ground_states(m: &Model, tables: &Potentials, eps: f64, limit: usize) -> Result<CspSolutions> {
    let mask = active_mask(tables, eps)?;
    solve_csp(m.graph(), &mask, limit)
}

fn check_shapes(h: &Hypergraph, c: &ActiveMask) -> Result<()> {
    let ok = c.unary.len() == h.num_vars()
        && c.factors.len() == h.num_edges()
        && c.unary.iter().zip(h.domains()).all(|(t, &d)| t.len() == d)
        && c.factors.iter().enumerate().all(|(e, t)| t.len() == h.table_len(e));
    if ok {
        Ok(())
    } else {
        Err(Error::Usage("mask shapes do not match the hypergraph".into()))
    }
}

/// Backtracking in variable index order with forward checking: once a
/// factor has a single unassigned variable left, that variable's
/// candidates are pruned to the ones the factor allows.
struct Search<'a> {
    h: &'a Hypergraph,
    c: &'a ActiveMask,
    limit: usize,
    budget: u64,
    alive: Vec<Vec<bool>>,
    trail: Vec<(usize, usize)>,
    x: Vec<usize>,
    out: Vec<Assignment>,
    truncated: bool,
}

impl Search<'_> {
    /// Returns false when the search must stop.
    fn assign(&mut self, v: usize) -> bool {
        let h = self.h;
        for s in 0..h.domain(v) {
            if !self.alive[v][s] {
                continue;
            }
            if self.budget == 0 {
                self.truncated = true;
                return false;
            }
            self.budget -= 1;
            self.x[v] = s;
            let mark = self.trail.len();
            if self.propagate(v) {
                if v + 1 == h.num_vars() {
                    if self.out.len() == self.limit {
                        self.truncated = true;
                        return false;
                    }
                    self.out.push(self.x.clone());
                } else if !self.assign(v + 1) {
                    return false;
                }
            }
            for (u, t) in self.trail.drain(mark..) {
                self.alive[u][t] = true;
            }
        }
        true
    }

    /// Checks factors completed by `v` and prunes factors with one variable left.
    fn propagate(&mut self, v: usize) -> bool {
        let h = self.h;
        for &(e, p) in h.incident(v) {
            let vars = h.edge(e);
            let remaining = vars.len() - p - 1;
            if remaining == 0 {
                if !self.c.factors[e][h.factor_index_of(e, &self.x)] {
                    return false;
                }
            } else if remaining == 1 {
                let last = vars.len() - 1;
                let u = vars[last];
                let stride_u = h.strides(e)[last];
                let base: usize = vars[..last]
                    .iter()
                    .zip(h.strides(e))
                    .map(|(&w, st)| self.x[w] * st)
                    .sum();
                let mut any = false;
                for t in 0..h.domain(u) {
                    if !self.alive[u][t] {
                        continue;
                    }
                    if self.c.factors[e][base + t * stride_u] {
                        any = true;
                    } else {
                        self.alive[u][t] = false;
                        self.trail.push((u, t));
                    }
                }
                if !any {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Factor;
    use crate::oracle::{self, for_each_assignment};
    use crate::semiring::Temperature;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pot(unary: Vec<Vec<f64>>, factors: Vec<Vec<f64>>) -> Potentials {
        Potentials { unary, factors }
    }

    #[test]
    fn mask_examples() {
        let m = active_mask(&pot(vec![vec![0.5, 0.5, 0.3]], vec![]), 1e-9).unwrap();
        assert_eq!(m.unary[0], vec![true, true, false]);
        let m = active_mask(&pot(vec![vec![0.5, 0.5 - 1e-12, 0.3]], vec![]), 1e-9).unwrap();
        assert_eq!(m.unary[0], vec![true, true, false]);
        let m = active_mask(&pot(vec![], vec![vec![0.0, 1.0, 2.0, 0.0]]), 0.0).unwrap();
        assert_eq!(m.factors[0], vec![false, false, true, false]);
        assert!(active_mask(&pot(vec![vec![f64::NEG_INFINITY; 2]], vec![]), 0.0).is_err());
        assert!(active_mask(&pot(vec![vec![0.0]], vec![]), -1.0).is_err());
    }

    fn pair_graph() -> Hypergraph {
        Hypergraph::new(vec![2, 2], vec![vec![0, 1]]).unwrap()
    }

    #[test]
    fn all_true_mask_enumerates_everything() {
        let h = Hypergraph::new(vec![2, 3, 2], vec![vec![0, 1], vec![1, 2]]).unwrap();
        let c = ActiveMask {
            unary: vec![vec![true; 2], vec![true; 3], vec![true; 2]],
            factors: vec![vec![true; 6], vec![true; 6]],
        };
        let all = solve_csp(&h, &c, 100).unwrap();
        assert_eq!(all.assignments.len(), 12);
        assert!(!all.truncated);
        let some = solve_csp(&h, &c, 5).unwrap();
        assert_eq!(some.assignments.len(), 5);
        assert!(some.truncated);
        assert_eq!(some.assignments[..], all.assignments[..5]);
    }

    #[test]
    fn unique_factor_maximum() {
        let h = pair_graph();
        let c = ActiveMask {
            unary: vec![vec![true; 2]; 2],
            factors: vec![vec![false, false, true, false]],
        };
        assert_eq!(solve_csp(&h, &c, 10).unwrap().assignments, vec![vec![1, 0]]);
        let unsat = ActiveMask {
            unary: vec![vec![true, false], vec![true; 2]],
            factors: c.factors.clone(),
        };
        assert!(solve_csp(&h, &unsat, 10).unwrap().is_empty());
        let wrong = ActiveMask { unary: vec![vec![true; 2]], factors: vec![] };
        assert!(solve_csp(&h, &wrong, 10).is_err());
    }

    #[test]
    fn node_budget_truncates() {
        let h = Hypergraph::new(vec![2; 10], vec![]).unwrap();
        let c = ActiveMask { unary: vec![vec![true; 2]; 10], factors: vec![] };
        let r = solve_csp_with_budget(&h, &c, 10_000, 50).unwrap();
        assert!(r.truncated);
        assert!(r.assignments.len() < 1024);
    }

    #[test]
    fn uniform_model_decodes_to_everything() {
        let m = Model::new(
            vec![2, 2, 2],
            vec![vec![0.0; 2]; 3],
            vec![Factor { vars: vec![0, 1, 2], table: vec![0.0; 8] }],
        )
        .unwrap();
        let r = decode_ground_states(&m, m.potentials(), 0.0, 100).unwrap();
        assert_eq!(r.assignments.len(), 8);
    }

    fn brute_force(h: &Hypergraph, c: &ActiveMask) -> Vec<Assignment> {
        let mut out = Vec::new();
        for_each_assignment(h, |x| {
            let ok = x.iter().enumerate().all(|(v, &s)| c.unary[v][s])
                && (0..h.num_edges()).all(|e| c.factors[e][h.factor_index_of(e, x)]);
            if ok {
                out.push(x.to_vec());
            }
        });
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn backtracking_matches_enumeration(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=5);
            let m = crate::model::tests::random_model(&mut rng, n, 3);
            let h = m.graph();
            let c = ActiveMask {
                unary: h.domains().iter().map(|&d| (0..d).map(|_| rng.random_bool(0.7)).collect()).collect(),
                factors: (0..h.num_edges()).map(|e| (0..h.table_len(e)).map(|_| rng.random_bool(0.6)).collect()).collect(),
            };
            let got = solve_csp(h, &c, usize::MAX).unwrap();
            prop_assert!(!got.truncated);
            prop_assert_eq!(got.assignments, brute_force(h, &c));
        }

        #[test]
        fn exact_max_marginals_decode_to_ground_states(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=5);
            let m = crate::model::tests::random_model(&mut rng, n, 3);
            let nu = oracle::exact_marginals(&m, Temperature::Infinite).unwrap();
            let dec = decode_ground_states(&m, &nu.tables, 0.0, usize::MAX).unwrap();
            prop_assert_eq!(dec.assignments, oracle::ground_states(&m).unwrap());
        }

        #[test]
        fn mask_invariant_under_table_shift(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = crate::model::tests::random_model(&mut rng, 4, 3);
            let mut shifted = m.potentials().clone();
            let k = rng.random_range(0..shifted.factors.len().max(1));
            if let Some(t) = shifted.factors.get_mut(k) {
                t.iter_mut().for_each(|x| *x += shift);
            }
            shifted.unary[0].iter_mut().for_each(|x| *x += shift);
            let a = decode_ground_states(&m, m.potentials(), 1e-9, usize::MAX).unwrap();
            let b = decode_ground_states(&m, &shifted, 1e-9, usize::MAX).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
