//! Brute-force exact inference by enumerating every joint assignment.
//!
//! These are the reference values the solvers are checked against, so they
//! are written for clarity over speed and refuse models above a fixed
//! number of joint states.

use crate::error::{Error, Result};
use crate::model::{Assignment, Hypergraph, Model, Potentials};
use crate::semiring::{ExtReal, Temperature};

/// Default maximum number of joint states enumerated.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 22;

/// How the values of a [`BeliefVector`] are expressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeliefScale {
    /// Probabilities; each table sums to one.
    Probability,
    /// Log-domain values at the given temperature; each table ⊕-sums to zero.
    Log(Temperature),
}

/// Per-variable and per-hyperedge (pseudo-)marginal tables.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub tables: Potentials,
    pub scale: BeliefScale,
}

impl BeliefVector {
    /// Log-scale beliefs obtained by ⊕-normalizing every table of `tables`.
    pub fn normalized_log(t: Temperature, mut tables: Potentials) -> Self {
        for table in tables.unary.iter_mut().chain(tables.factors.iter_mut()) {
            let z = t.reduce_slice(table);
            for x in table.iter_mut() {
                *x -= z;
            }
        }
        BeliefVector {
            tables,
            scale: BeliefScale::Log(t),
        }
    }

    /// Converts finite-temperature log beliefs to probabilities (`μ = e^{βν}`).
    ///
    /// Returns `None` for zero-temperature beliefs, which have no probability reading.
    pub fn to_probability(&self) -> Option<BeliefVector> {
        let beta = match self.scale {
            BeliefScale::Probability => return Some(self.clone()),
            BeliefScale::Log(Temperature::Finite(b)) => b,
            BeliefScale::Log(Temperature::Infinite) => return None,
        };
        let conv = |t: &Vec<f64>| t.iter().map(|x| (beta * x).exp()).collect();
        Some(BeliefVector {
            tables: Potentials {
                unary: self.tables.unary.iter().map(conv).collect(),
                factors: self.tables.factors.iter().map(conv).collect(),
            },
            scale: BeliefScale::Probability,
        })
    }

    /// Checks the per-table normalization of this scale within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.tables.tables().all(|t| match self.scale {
            BeliefScale::Probability => {
                t.iter().all(|&p| (-tol..=1.0 + tol).contains(&p))
                    && (t.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            BeliefScale::Log(temp) => temp.reduce_slice(t).abs() <= tol,
        })
    }

    /// Largest absolute entrywise difference, separately for unary and factor tables.
    ///
    /// `-inf` entries match only `-inf`; a mismatch counts as an infinite error.
    pub fn max_abs_diff(&self, other: &BeliefVector) -> (f64, f64) {
        let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter()
                .zip(b)
                .flat_map(|(x, y)| x.iter().zip(y))
                .map(|(&p, &q)| {
                    if p == q {
                        0.0
                    } else {
                        (p - q).abs()
                    }
                })
                .fold(0.0, f64::max)
        };
        (
            diff(&self.tables.unary, &other.tables.unary),
            diff(&self.tables.factors, &other.tables.factors),
        )
    }
}

/// Exhaustive enumeration with a cap on the number of joint states.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub cap: u128,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl Oracle {
    pub fn with_cap(cap: u128) -> Self {
        Oracle { cap }
    }

    fn energies(&self, m: &Model) -> Result<Vec<ExtReal>> {
        let states = m.graph().joint_states();
        if states > self.cap {
            return Err(Error::Capacity {
                states,
                cap: self.cap,
            });
        }
        let mut out = Vec::with_capacity(states as usize);
        for_each_assignment(m.graph(), |x| out.push(m.evaluate_unchecked(x)));
        Ok(out)
    }

    /// `Φ(θ) = ⊕_{x} ⟨θ, δ(x)⟩`; the maximum energy at zero temperature.
    pub fn log_partition(&self, m: &Model, t: Temperature) -> Result<ExtReal> {
        Ok(t.reduce_slice(&self.energies(m)?))
    }

    /// Exact marginals at finite `β` (probability scale), or max-marginals
    /// `ν∞ = max_{x_{V∖a}} ⟨θ, δ(x)⟩ - Φ∞` at `β = ∞` (log scale).
    pub fn exact_marginals(&self, m: &Model, t: Temperature) -> Result<BeliefVector> {
        let energies = self.energies(m)?;
        let phi = t.reduce_slice(&energies);
        if phi == f64::NEG_INFINITY {
            return Err(Error::Degenerate);
        }
        let g = m.graph();
        let (init, scale) = match t {
            Temperature::Finite(_) => (0.0, BeliefScale::Probability),
            Temperature::Infinite => (f64::NEG_INFINITY, BeliefScale::Log(t)),
        };
        let mut tables = Potentials {
            unary: g.domains().iter().map(|&d| vec![init; d]).collect(),
            factors: (0..g.num_edges()).map(|e| vec![init; g.table_len(e)]).collect(),
        };
        let mut i = 0;
        for_each_assignment(g, |x| {
            let en = energies[i];
            i += 1;
            match t {
                Temperature::Finite(beta) => {
                    let p = (beta * (en - phi)).exp();
                    for (v, &s) in x.iter().enumerate() {
                        tables.unary[v][s] += p;
                    }
                    for e in 0..g.num_edges() {
                        tables.factors[e][g.factor_index_of(e, x)] += p;
                    }
                }
                Temperature::Infinite => {
                    let r = en - phi;
                    for (v, &s) in x.iter().enumerate() {
                        let c = &mut tables.unary[v][s];
                        *c = c.max(r);
                    }
                    for e in 0..g.num_edges() {
                        let c = &mut tables.factors[e][g.factor_index_of(e, x)];
                        *c = c.max(r);
                    }
                }
            }
        });
        Ok(BeliefVector { tables, scale })
    }

    /// Every assignment attaining the maximum energy.
    pub fn ground_states(&self, m: &Model) -> Result<Vec<Assignment>> {
        let energies = self.energies(m)?;
        let best = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Err(Error::Degenerate);
        }
        let mut out = Vec::new();
        let mut i = 0;
        for_each_assignment(m.graph(), |x| {
            if energies[i] == best {
                out.push(x.to_vec());
            }
            i += 1;
        });
        Ok(out)
    }
}

/// `Φ` with the default enumeration cap.
pub fn log_partition(m: &Model, t: Temperature) -> Result<ExtReal> {
    Oracle::default().log_partition(m, t)
}

/// Exact (max-)marginals with the default enumeration cap.
pub fn exact_marginals(m: &Model, t: Temperature) -> Result<BeliefVector> {
    Oracle::default().exact_marginals(m, t)
}

/// Ground states with the default enumeration cap.
pub fn ground_states(m: &Model) -> Result<Vec<Assignment>> {
    Oracle::default().ground_states(m)
}

/// Visits every joint assignment in lexicographic order (last variable fastest).
pub fn for_each_assignment(g: &Hypergraph, mut f: impl FnMut(&[usize])) {
    let n = g.num_vars();
    let mut x = vec![0usize; n];
    loop {
        f(&x);
        let mut v = n;
        loop {
            if v == 0 {
                return;
            }
            v -= 1;
            x[v] += 1;
            if x[v] < g.domain(v) {
                break;
            }
            x[v] = 0;
        }
    }
}
