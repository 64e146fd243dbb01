//! Minorize-maximize on the Bethe free energy, with diffusion as the inner loop.
//!
//! Each outer iteration
//!
//! 1. runs diffusion on `θ̂`, whose factor tables are `θ^α_a + Σ_{u∈a} θ̃_u`
//!    and whose unary tables are `θ^α_v`, until
//!    `⊕_{x_{a∖v}} [θ^α_a + Σ_u θ̃_u] = θ^α_v(x_v)`;
//! 2. sets `θ̃_v ← θ^α_v - ⊕ θ^α_v`.
//!
//! It stops at a (max-sum at `β = ∞`) belief propagation fixed point of `θ^α`.
//! Messages persist across outer iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csp_decode::{self, ActiveMask};
use crate::diffusion::{Engine, Scratch, SolveReport, SweepOrder};
use crate::error::Result;
use crate::model::{marginal_reduce, MessageVector, Model, Potentials, TildeTheta};
use crate::oracle::BeliefVector;
use crate::semiring::{ExtReal, Temperature};

/// Default outer stopping tolerance on the BP residual.
pub const DEFAULT_OUTER_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_OUTER: usize = 500;
/// Band used when rounding `θ̂` to its active mask for the change monitor.
pub const DEFAULT_MASK_EPS: f64 = 1e-6;

/// Initial `θ̃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TildeInit {
    /// Uniform over live states: `θ̃ = 0` at `β = ∞`, `-ln(K_v)/β` otherwise.
    Zero,
    /// I.i.d. uniform `[-1, 1]` entries from a seeded ChaCha8 stream, then normalized.
    Random(u64),
}

/// Per-outer-iteration inner tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerTolerance {
    Fixed(f64),
    /// `max(floor, factor · previous BP residual)`; `floor` on the first iteration.
    Schedule { floor: f64, factor: f64 },
}

impl Default for InnerTolerance {
    fn default() -> Self {
        InnerTolerance::Schedule {
            floor: 1e-9,
            factor: 1e-3,
        }
    }
}

impl InnerTolerance {
    fn at(self, prev_bp_residual: Option<f64>) -> f64 {
        match self {
            InnerTolerance::Fixed(t) => t,
            InnerTolerance::Schedule { floor, factor } => match prev_bp_residual {
                Some(r) if r.is_finite() => floor.max(factor * r),
                _ => floor,
            },
        }
    }
}

/// Stopping rules and monitors for [`DoubleLoopState::run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner_tol: InnerTolerance,
    pub max_inner: usize,
    pub mask_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            outer_tol: DEFAULT_OUTER_TOL,
            max_outer: DEFAULT_MAX_OUTER,
            inner_tol: InnerTolerance::default(),
            max_inner: crate::diffusion::DEFAULT_MAX_SWEEPS,
            mask_eps: DEFAULT_MASK_EPS,
        }
    }
}

/// Measurements from one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub bp_residual: f64,
    /// `U(θ̂^α)` after Step 2.
    pub u_hat: ExtReal,
    /// `U(θ̂^α)` before Step 1.
    pub u_before: ExtReal,
    /// `U(θ̂^α)` after Step 1.
    pub u_after_inner: ExtReal,
    pub inner: SolveReport,
}

/// One row of an [`OuterTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub outer_iter: usize,
    pub bp_residual: f64,
    pub u_hat: ExtReal,
    pub u_after_inner: ExtReal,
    pub active_mask_digest: String,
    pub mask_changed: bool,
    pub inner_sweeps: usize,
    pub inner_converged: bool,
}

/// Everything recorded by [`DoubleLoopState::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct OuterTrace {
    /// BP residual and mask digest of the starting state.
    pub initial_bp_residual: f64,
    pub initial_u_hat: ExtReal,
    pub initial_mask_digest: String,
    pub records: Vec<OuterRecord>,
    pub converged: bool,
}

impl OuterTrace {
    pub fn final_bp_residual(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_bp_residual, |r| r.bp_residual)
    }

    /// Iterations (1-based, after the first) at which `⌈θ̂⌉` or `U(θ̂)` moved.
    ///
    /// Returns `(iteration, |ΔU|, mask_changed)` for each violation of the
    /// "unchanged after the first outer iteration" pattern.
    pub fn key_observation_violations(&self, u_tol: f64) -> Vec<(usize, f64, bool)> {
        self.records
            .windows(2)
            .filter_map(|w| {
                let du = (w[1].u_hat - w[0].u_hat).abs();
                let changed = w[1].active_mask_digest != w[0].active_mask_digest;
                (du > u_tol || changed).then_some((w[1].outer_iter, du, changed))
            })
            .collect()
    }

    /// CSV with header `outer_iter,log10_bp_residual,u_hat,mask_changed,inner_sweeps`.
    ///
    /// Row 0 is the starting state.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("outer_iter,log10_bp_residual,u_hat,mask_changed,inner_sweeps\n");
        out.push_str(&format!(
            "0,{},{},0,0\n",
            fmt_f(self.initial_bp_residual.log10()),
            fmt_f(self.initial_u_hat)
        ));
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.outer_iter,
                fmt_f(r.bp_residual.log10()),
                fmt_f(r.u_hat),
                r.mask_changed as u8,
                r.inner_sweeps
            ));
        }
        out
    }
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:.12e}")
    }
}

/// Messages `α`, outer variable `θ̃`, and counters for the double loop.
#[derive(Debug, Clone)]
pub struct DoubleLoopState {
    model: Model,
    messages: MessageVector,
    tilde: TildeTheta,
    temperature: Temperature,
    order: SweepOrder,
    outer_count: usize,
    inner_sweeps: usize,
}

impl DoubleLoopState {
    pub fn new(model: Model, temperature: Temperature, init: TildeInit) -> Self {
        let g = model.graph();
        let mut rng = match init {
            TildeInit::Zero => None,
            TildeInit::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        let tables = (0..g.num_vars())
            .map(|v| {
                model
                    .unary(v)
                    .iter()
                    .map(|&u| {
                        let r = rng.as_mut().map_or(0.0, |r| r.random_range(-1.0..=1.0));
                        if u == f64::NEG_INFINITY {
                            f64::NEG_INFINITY
                        } else {
                            r
                        }
                    })
                    .collect()
            })
            .collect();
        let tilde = TildeTheta::normalized(temperature, tables)
            .expect("unary tables always have a live state");
        let messages = MessageVector::zeros(g);
        DoubleLoopState {
            model,
            messages,
            tilde,
            temperature,
            order: SweepOrder::default(),
            outer_count: 0,
            inner_sweeps: 0,
        }
    }

    /// Starts from explicit messages and `θ̃` (normalized here).
    pub fn with_state(
        model: Model,
        temperature: Temperature,
        messages: MessageVector,
        tilde: Vec<Vec<ExtReal>>,
    ) -> Result<Self> {
        let tilde = TildeTheta::normalized(temperature, tilde)?;
        model.hat_theta(&tilde)?;
        Ok(DoubleLoopState {
            model,
            messages,
            tilde,
            temperature,
            order: SweepOrder::default(),
            outer_count: 0,
            inner_sweeps: 0,
        })
    }

    pub fn set_order(&mut self, order: SweepOrder) {
        self.order = order;
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn messages(&self) -> &MessageVector {
        &self.messages
    }

    pub fn tilde(&self) -> &TildeTheta {
        &self.tilde
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn outer_count(&self) -> usize {
        self.outer_count
    }

    /// Total inner sweeps so far.
    pub fn inner_sweeps(&self) -> usize {
        self.inner_sweeps
    }

    fn engine(&self) -> Engine<'_> {
        Engine {
            model: &self.model,
            aug: Some(self.tilde.tables()),
            t: self.temperature,
        }
    }

    /// Step 1: diffusion on `θ̂^α` with `θ̃` fixed.
    pub fn inner_solve(&mut self, tol: f64, max_sweeps: usize) -> SolveReport {
        assert!(tol > 0.0, "tolerance must be positive");
        let engine = Engine {
            model: &self.model,
            aug: Some(self.tilde.tables()),
            t: self.temperature,
        };
        engine.run(&mut self.messages, self.order, tol, max_sweeps, &mut self.inner_sweeps)
    }

    /// Step 2: `θ̃_v ← θ^α_v - ⊕ θ^α_v`.
    pub fn update_tilde(&mut self) {
        let mut t = Vec::new();
        for v in 0..self.model.num_vars() {
            self.model.reparam_unary_table(&self.messages, v, &mut t);
            let z = self.temperature.reduce_slice(&t);
            for (dst, &x) in self.tilde.0[v].iter_mut().zip(&t) {
                *dst = x - z;
            }
        }
    }

    /// `U(θ̂^α) = Σ_v ⊕ θ^α_v + Σ_a ⊕ [θ^α_a + Σ_{v∈a} θ̃_v]`.
    pub fn u_hat(&self) -> ExtReal {
        self.engine().dual(&self.messages, &mut Scratch::default())
    }

    /// Mean diffusion residual of the inner problem (Step 1 condition).
    pub fn inner_residual(&self) -> f64 {
        self.engine().residual(&self.messages, &mut Scratch::default()).0
    }

    /// Steps 1 and 2.
    pub fn outer_step(&mut self, inner_tol: f64, max_inner: usize) -> OuterStep {
        let u_before = self.u_hat();
        let inner = self.inner_solve(inner_tol, max_inner);
        let u_after_inner = inner.dual_value;
        self.update_tilde();
        self.outer_count += 1;
        OuterStep {
            bp_residual: self.bp_residual(),
            u_hat: self.u_hat(),
            u_before,
            u_after_inner,
            inner,
        }
    }

    /// Mean over pairs of the spread `max - min` over live `x_v` of
    /// `⊕_{x_{a∖v}} [θ^α_a + Σ_{u∈a} θ^α_u] - θ^α_v(x_v)`.
    pub fn bp_residual(&self) -> f64 {
        bp_residual_of(&self.model, &self.messages, self.temperature)
    }

    /// Beliefs `θ̂ - ⊕ θ̂` with `θ̂_v = θ^α_v`, `θ̂_a = θ^α_a + Σ_{v∈a} θ^α_v`.
    pub fn bp_marginals(&self) -> BeliefVector {
        BeliefVector::normalized_log(self.temperature, bp_hat(&self.model, &self.messages))
    }

    /// The tables `θ̂^α` of the current inner problem.
    pub fn hat_tables(&self) -> Potentials {
        let mut p = self.model.reparam_potentials(&self.messages);
        let g = self.model.graph();
        for (e, t) in p.factors.iter_mut().enumerate() {
            crate::model::add_unary_terms(g, e, t, |pos, s| self.tilde.0[g.edge(e)[pos]][s]);
        }
        p
    }

    /// `⌈θ̂^α⌉` with band `eps`.
    pub fn active_mask(&self, eps: f64) -> ActiveMask {
        csp_decode::active_mask(&self.hat_tables(), eps).expect("live tables always have a maximum")
    }

    /// Outer iterations until the BP residual is at most `cfg.outer_tol`.
    pub fn run(&mut self, cfg: &RunConfig) -> OuterTrace {
        assert!(cfg.outer_tol > 0.0, "tolerance must be positive");
        let initial_bp_residual = self.bp_residual();
        let initial_u_hat = self.u_hat();
        let initial_mask_digest = self.active_mask(cfg.mask_eps).digest();
        let mut prev_digest = initial_mask_digest.clone();
        let mut prev_res = None;
        let mut records = Vec::new();
        let mut converged = false;
        for _ in 0..cfg.max_outer {
            let step = self.outer_step(cfg.inner_tol.at(prev_res), cfg.max_inner);
            let digest = self.active_mask(cfg.mask_eps).digest();
            records.push(OuterRecord {
                outer_iter: self.outer_count,
                bp_residual: step.bp_residual,
                u_hat: step.u_hat,
                u_after_inner: step.u_after_inner,
                mask_changed: digest != prev_digest,
                active_mask_digest: digest.clone(),
                inner_sweeps: step.inner.iterations,
                inner_converged: step.inner.converged,
            });
            prev_digest = digest;
            prev_res = Some(step.bp_residual);
            if step.bp_residual <= cfg.outer_tol {
                converged = true;
                break;
            }
        }
        OuterTrace {
            initial_bp_residual,
            initial_u_hat,
            initial_mask_digest,
            records,
            converged,
        }
    }
}

/// `θ̂` of the BP beliefs: unary terms of `θ^α` folded into every factor.
fn bp_hat(model: &Model, msgs: &MessageVector) -> Potentials {
    let mut p = model.reparam_potentials(msgs);
    let g = model.graph();
    let unary = p.unary.clone();
    for (e, t) in p.factors.iter_mut().enumerate() {
        crate::model::add_unary_terms(g, e, t, |pos, s| unary[g.edge(e)[pos]][s]);
    }
    p
}

pub(crate) fn bp_residual_of(model: &Model, msgs: &MessageVector, t: Temperature) -> f64 {
    let g = model.graph();
    if g.num_pairs() == 0 {
        return 0.0;
    }
    let hat = bp_hat(model, msgs);
    let mut red = Vec::new();
    let mut total = 0.0;
    for (e, p) in g.pairs() {
        let v = g.edge(e)[p];
        marginal_reduce(g, t, e, p, &hat.factors[e], &mut red);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (xv, &r) in red.iter().enumerate() {
            if model.unary(v)[xv] == f64::NEG_INFINITY || r == f64::NEG_INFINITY {
                continue;
            }
            let gap = r - hat.unary[v][xv];
            lo = lo.min(gap);
            hi = hi.max(gap);
        }
        if hi >= lo {
            total += hi - lo;
        }
    }
    total / g.num_pairs() as f64
}
