//! Coordinate descent on `U(θ^α) = Σ_v ⊕ θ^α_v + Σ_a ⊕ θ^α_a` over messages.
//!
//! Each update equalizes `θ^α_v(x_v)` with `⊕_{x_{a∖v}} θ^α_a(x_a)` for one
//! pair `(a, v)` by moving half of the difference into `α_{av}`. At `β = ∞`
//! this is max-sum diffusion.

use crate::model::{marginal_reduce, MessageVector, Model, Potentials};
use crate::oracle::BeliefVector;
use crate::semiring::{ExtReal, Temperature};

/// Default stopping tolerance on the mean fixed-point residual.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default cap on sweeps.
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Order in which the pairs `(a, v)` are visited during one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    /// Hyperedges lexicographically, then variables within each hyperedge.
    #[default]
    Forward,
    /// A forward pass followed by the same pairs in reverse.
    ForwardBackward,
}

/// One row of a solver trace, recorded after each sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    /// Mean absolute violation of the fixed-point condition.
    pub residual: f64,
    /// Largest absolute violation.
    pub max_violation: f64,
    pub dual_value: ExtReal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub dual_value: ExtReal,
    pub trace: Vec<SweepRecord>,
}

/// Diffusion update rules, optionally on factor tables augmented by
/// per-variable terms `Σ_{u∈a} aug_u(x_u)` (the double loop's `θ̃`).
pub(crate) struct Engine<'a> {
    pub model: &'a Model,
    pub aug: Option<&'a [Vec<f64>]>,
    pub t: Temperature,
}

#[derive(Default)]
pub(crate) struct Scratch {
    unary: Vec<f64>,
    factor: Vec<f64>,
    reduced: Vec<f64>,
}

impl Engine<'_> {
    /// `θ^α_a(x_a) + Σ_{u∈a} aug_u(x_u)`.
    pub fn factor_table(&self, msgs: &MessageVector, e: usize, out: &mut Vec<f64>) {
        self.model.reparam_factor_table(msgs, e, out);
        if let Some(aug) = self.aug {
            let g = self.model.graph();
            crate::model::add_unary_terms(g, e, out, |p, s| aug[g.edge(e)[p]][s]);
        }
    }

    /// Applies the averaging update to pair `(e, pos)`; returns the largest message change.
    pub fn update_pair(&self, msgs: &mut MessageVector, e: usize, pos: usize, sc: &mut Scratch) -> f64 {
        let g = self.model.graph();
        let v = g.edge(e)[pos];
        self.model.reparam_unary_table(msgs, v, &mut sc.unary);
        self.factor_table(msgs, e, &mut sc.factor);
        marginal_reduce(g, self.t, e, pos, &sc.factor, &mut sc.reduced);
        let base = self.model.unary(v);
        let alpha = msgs.get_mut(g, e, pos);
        let mut change = 0.0f64;
        for xv in 0..alpha.len() {
            // dead states keep their messages; a dead reduction can only come from `aug`
            if base[xv] == f64::NEG_INFINITY || sc.reduced[xv] == f64::NEG_INFINITY {
                continue;
            }
            let delta = 0.5 * (sc.unary[xv] - sc.reduced[xv]);
            alpha[xv] += delta;
            change = change.max(delta.abs());
        }
        change
    }

    pub fn sweep(&self, msgs: &mut MessageVector, order: SweepOrder, sc: &mut Scratch) -> f64 {
        let g = self.model.graph();
        let mut change = 0.0f64;
        for (e, p) in g.pairs() {
            change = change.max(self.update_pair(msgs, e, p, sc));
        }
        if order == SweepOrder::ForwardBackward {
            let pairs: Vec<_> = g.pairs().collect();
            for &(e, p) in pairs.iter().rev() {
                change = change.max(self.update_pair(msgs, e, p, sc));
            }
        }
        change
    }

    /// `(mean, max)` of `|θ^α_v(x_v) - ⊕_{x_{a∖v}} θ^α_a(x_a)|` over pairs and live states.
    pub fn residual(&self, msgs: &MessageVector, sc: &mut Scratch) -> (f64, f64) {
        let g = self.model.graph();
        let unary: Vec<Vec<f64>> = (0..g.num_vars())
            .map(|v| {
                let mut t = Vec::new();
                self.model.reparam_unary_table(msgs, v, &mut t);
                t
            })
            .collect();
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        for e in 0..g.num_edges() {
            self.factor_table(msgs, e, &mut sc.factor);
            for p in 0..g.edge(e).len() {
                let v = g.edge(e)[p];
                marginal_reduce(g, self.t, e, p, &sc.factor, &mut sc.reduced);
                for (xv, &r) in sc.reduced.iter().enumerate() {
                    if self.model.unary(v)[xv] == f64::NEG_INFINITY || r == f64::NEG_INFINITY {
                        continue;
                    }
                    let d = (unary[v][xv] - r).abs();
                    sum += d;
                    max = max.max(d);
                    count += 1;
                }
            }
        }
        if count == 0 {
            (0.0, 0.0)
        } else {
            (sum / count as f64, max)
        }
    }

    /// `Σ_v ⊕ θ^α_v + Σ_a ⊕ (θ^α_a + aug)`.
    pub fn dual(&self, msgs: &MessageVector, sc: &mut Scratch) -> ExtReal {
        let g = self.model.graph();
        let mut total = 0.0;
        for v in 0..g.num_vars() {
            self.model.reparam_unary_table(msgs, v, &mut sc.unary);
            total += self.t.reduce_slice(&sc.unary);
        }
        for e in 0..g.num_edges() {
            self.factor_table(msgs, e, &mut sc.factor);
            total += self.t.reduce_slice(&sc.factor);
        }
        total
    }

    pub fn run(
        &self,
        msgs: &mut MessageVector,
        order: SweepOrder,
        tol: f64,
        max_sweeps: usize,
        sweeps_done: &mut usize,
    ) -> SolveReport {
        let mut sc = Scratch::default();
        let mut trace = Vec::new();
        let (mut residual, _) = self.residual(msgs, &mut sc);
        let mut iterations = 0;
        while residual > tol && iterations < max_sweeps {
            self.sweep(msgs, order, &mut sc);
            iterations += 1;
            *sweeps_done += 1;
            let (mean, max) = self.residual(msgs, &mut sc);
            residual = mean;
            trace.push(SweepRecord {
                sweep: iterations,
                residual: mean,
                max_violation: max,
                dual_value: self.dual(msgs, &mut sc),
            });
        }
        SolveReport {
            converged: residual <= tol,
            iterations,
            final_residual: residual,
            dual_value: self.dual(msgs, &mut sc),
            trace,
        }
    }
}

/// Messages and counters for running diffusion on a fixed model.
#[derive(Debug, Clone)]
pub struct DiffusionState {
    model: Model,
    messages: MessageVector,
    temperature: Temperature,
    order: SweepOrder,
    sweep_count: usize,
    last_residual: f64,
}

impl DiffusionState {
    /// Starts from zero messages.
    pub fn new(model: Model, temperature: Temperature) -> Self {
        let messages = MessageVector::zeros(model.graph());
        Self::with_messages(model, temperature, messages)
    }

    /// Starts from the given messages, which must belong to `model`'s hypergraph.
    pub fn with_messages(model: Model, temperature: Temperature, messages: MessageVector) -> Self {
        let mut s = DiffusionState {
            model,
            messages,
            temperature,
            order: SweepOrder::default(),
            sweep_count: 0,
            last_residual: f64::NAN,
        };
        s.last_residual = s.fixed_point_residual();
        s
    }

    pub fn set_order(&mut self, order: SweepOrder) {
        self.order = order;
    }

    pub fn order(&self) -> SweepOrder {
        self.order
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn messages(&self) -> &MessageVector {
        &self.messages
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn sweep_count(&self) -> usize {
        self.sweep_count
    }

    pub fn last_residual(&self) -> f64 {
        self.last_residual
    }

    fn engine(&self) -> Engine<'_> {
        Engine {
            model: &self.model,
            aug: None,
            t: self.temperature,
        }
    }

    /// `U(θ^α)` (or `U∞` at zero temperature).
    pub fn dual_objective(&self) -> ExtReal {
        self.engine().dual(&self.messages, &mut Scratch::default())
    }

    /// Enforces the fixed-point condition for the pair `(e, pos)`; returns the largest change.
    pub fn update_pair(&mut self, e: usize, pos: usize) -> f64 {
        let engine = Engine {
            model: &self.model,
            aug: None,
            t: self.temperature,
        };
        engine.update_pair(&mut self.messages, e, pos, &mut Scratch::default())
    }

    /// One pass over all pairs; returns the residual afterwards.
    pub fn sweep(&mut self, order: SweepOrder) -> f64 {
        let engine = Engine {
            model: &self.model,
            aug: None,
            t: self.temperature,
        };
        let mut sc = Scratch::default();
        engine.sweep(&mut self.messages, order, &mut sc);
        self.sweep_count += 1;
        self.last_residual = engine.residual(&self.messages, &mut sc).0;
        self.last_residual
    }

    /// Mean absolute violation of `⊕_{x_{a∖v}} θ^α_a(x_a) = θ^α_v(x_v)`.
    pub fn fixed_point_residual(&self) -> f64 {
        self.engine().residual(&self.messages, &mut Scratch::default()).0
    }

    /// Largest absolute violation of the fixed-point condition.
    pub fn max_violation(&self) -> f64 {
        self.engine().residual(&self.messages, &mut Scratch::default()).1
    }

    /// The reparameterized potentials `θ^α`.
    pub fn reparameterized(&self) -> Potentials {
        self.model.reparam_potentials(&self.messages)
    }

    /// `log μ = θ^α - ⊕ θ^α` per table.
    pub fn pseudo_marginals(&self) -> BeliefVector {
        BeliefVector::normalized_log(self.temperature, self.reparameterized())
    }

    /// Sweeps until the residual is at most `tol` or `max_sweeps` sweeps have run.
    pub fn run_to_convergence(&mut self, tol: f64, max_sweeps: usize) -> SolveReport {
        assert!(tol > 0.0, "tolerance must be positive");
        let engine = Engine {
            model: &self.model,
            aug: None,
            t: self.temperature,
        };
        let report = engine.run(&mut self.messages, self.order, tol, max_sweeps, &mut self.sweep_count);
        self.last_residual = report.final_residual;
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Factor;
    use crate::oracle;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge_model() -> Model {
        Model::new(
            vec![2, 2],
            vec![vec![0.0; 2]; 2],
            vec![Factor { vars: vec![0, 1], table: vec![0.0, 1.0, 2.0, 0.0] }],
        )
        .unwrap()
    }

    #[test]
    fn dual_objective_examples() {
        let m = Model::new(
            vec![2, 3],
            vec![vec![0.0; 2], vec![0.0; 3]],
            vec![Factor { vars: vec![0, 1], table: vec![0.0; 6] }],
        )
        .unwrap();
        assert_eq!(DiffusionState::new(m, Temperature::Infinite).dual_objective(), 0.0);
        let single = Model::new(vec![2], vec![vec![0.0, 0.0]], vec![]).unwrap();
        let s = DiffusionState::new(single, Temperature::Finite(1.0));
        assert_abs_diff_eq!(s.dual_objective(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn residual_of_binary_edge_at_zero_messages() {
        let s = DiffusionState::new(edge_model(), Temperature::Infinite);
        // v=0: |0 - max(0,1)|, |0 - max(2,0)|; v=1: |0 - max(0,2)|, |0 - max(1,0)|
        let expected = (1.0 + 2.0 + 2.0 + 1.0) / 4.0;
        assert_eq!(s.fixed_point_residual(), expected);
        assert_eq!(s.max_violation(), 2.0);
    }

    #[test]
    fn constant_tables_residual() {
        // θ_v ≡ 1, θ_a ≡ 4 on 2x3 domains: at β=1 the reduction over the other
        // variable is 4 + log(other domain size)
        let m = Model::new(
            vec![2, 3],
            vec![vec![1.0; 2], vec![1.0; 3]],
            vec![Factor { vars: vec![0, 1], table: vec![4.0; 6] }],
        )
        .unwrap();
        let s = DiffusionState::new(m.clone(), Temperature::Finite(1.0));
        let r0 = (4.0 + 3f64.ln() - 1.0).abs();
        let r1 = (4.0 + 2f64.ln() - 1.0).abs();
        let expected = (2.0 * r0 + 3.0 * r1) / 5.0;
        assert_abs_diff_eq!(s.fixed_point_residual(), expected, epsilon = 1e-12);
        let s = DiffusionState::new(m, Temperature::Infinite);
        assert_eq!(s.fixed_point_residual(), 3.0);
    }

    #[test]
    fn single_update_by_hand() {
        let mut s = DiffusionState::new(edge_model(), Temperature::Infinite);
        let change = s.update_pair(0, 0);
        // reductions over x_1 are (1, 2); α_{a0} = ½(0 - (1, 2))
        assert_eq!(s.messages().get(s.model().graph(), 0, 0), &[-0.5, -1.0]);
        assert_eq!(change, 1.0);
        let m = s.model();
        let a = s.messages();
        assert_eq!(m.reparam_unary(a, 0, 0), 0.5);
        assert_eq!(m.reparam_unary(a, 0, 1), 1.0);
        // the pair now satisfies the fixed-point condition
        let mut red = Vec::new();
        let table: Vec<f64> = (0..4).map(|i| m.reparam_factor(a, 0, i)).collect();
        marginal_reduce(m.graph(), Temperature::Infinite, 0, 0, &table, &mut red);
        assert_eq!(red, vec![0.5, 1.0]);
        // a second update on the same pair is a no-op
        assert_eq!(s.update_pair(0, 0), 0.0);
    }

    #[test]
    fn updates_do_not_increase_dual_at_finite_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = crate::model::tests::random_model(&mut rng, 5, 3);
        let mut s = DiffusionState::new(m, Temperature::Finite(1.0));
        let pairs: Vec<_> = s.model().graph().pairs().collect();
        let mut prev = s.dual_objective();
        for _ in 0..5 {
            for &(e, p) in &pairs {
                s.update_pair(e, p);
                let u = s.dual_objective();
                assert!(u <= prev + 1e-9, "{u} > {prev}");
                prev = u;
            }
        }
    }

    #[test]
    fn no_edges_is_a_no_op() {
        let m = Model::new(vec![3], vec![vec![0.1, 0.2, 0.3]], vec![]).unwrap();
        let mut s = DiffusionState::new(m, Temperature::Infinite);
        assert_eq!(s.sweep(SweepOrder::Forward), 0.0);
        let r = s.run_to_convergence(1e-9, 10);
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.dual_value, 0.3);
    }

    #[test]
    fn converged_state_stays_put() {
        let mut s = DiffusionState::new(edge_model(), Temperature::Finite(1.0));
        let r = s.run_to_convergence(1e-12, 10_000);
        assert!(r.converged);
        let before = s.messages().clone();
        let res = s.sweep(SweepOrder::Forward);
        assert!(res <= 1e-12);
        for (a, b) in before.as_slice().iter().zip(s.messages().as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn tree_is_tight_at_zero_temperature() {
        let m = Model::new(
            vec![3, 2, 3],
            vec![vec![0.2, -0.1, 0.4], vec![0.0, 0.3], vec![-0.5, 0.1, 0.0]],
            vec![
                Factor { vars: vec![0, 1], table: vec![0.3, -0.2, 0.9, 0.1, -0.4, 0.5] },
                Factor { vars: vec![1, 2], table: vec![0.7, 0.0, -0.3, 0.2, 0.8, -0.6] },
            ],
        )
        .unwrap();
        let phi = oracle::log_partition(&m, Temperature::Infinite).unwrap();
        let mut s = DiffusionState::new(m, Temperature::Infinite);
        let r = s.run_to_convergence(1e-12, 10_000);
        assert!(r.converged);
        assert!((r.dual_value - phi).abs() <= 1e-8, "{} vs {phi}", r.dual_value);
        let b = s.pseudo_marginals();
        assert!(b.is_normalized(1e-12));
    }

    #[test]
    fn pseudo_marginal_normalization() {
        let m = Model::new(vec![2], vec![vec![0.0, 0.0]], vec![]).unwrap();
        let b = DiffusionState::new(m, Temperature::Finite(1.0)).pseudo_marginals();
        assert_abs_diff_eq!(b.tables.unary[0][0], -(2f64.ln()), epsilon = 1e-15);
        let m = Model::new(vec![2], vec![vec![0.0, -1.0]], vec![]).unwrap();
        let b = DiffusionState::new(m, Temperature::Infinite).pseudo_marginals();
        assert_eq!(b.tables.unary[0], vec![0.0, -1.0]);
    }

    #[test]
    fn frustrated_triangle_has_a_gap() {
        // repulsive binary 3-cycle: no assignment disagrees on every edge
        let rep = vec![0.0, 1.0, 1.0, 0.0];
        let m = Model::new(
            vec![2; 3],
            vec![vec![0.0; 2]; 3],
            vec![
                Factor { vars: vec![0, 1], table: rep.clone() },
                Factor { vars: vec![0, 2], table: rep.clone() },
                Factor { vars: vec![1, 2], table: rep },
            ],
        )
        .unwrap();
        let phi = oracle::log_partition(&m, Temperature::Infinite).unwrap();
        assert_eq!(phi, 2.0);
        let mut s = DiffusionState::new(m, Temperature::Infinite);
        let r = s.run_to_convergence(1e-9, 10_000);
        assert!(r.converged);
        assert!(r.dual_value - phi > 0.1, "{}", r.dual_value);
    }
}
