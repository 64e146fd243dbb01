//! The `bethe` command-line driver.
//!
//! ```text
//! bethe generate --topology grid --rows 4 --cols 4 --labels 4 --interaction random --seed 1 -o m.json
//! bethe solve m.json --algorithm double-loop --beta inf -o result.json --trace trace.csv
//! bethe compare m.json --algorithm diffusion --beta inf
//! bethe experiment --out-dir fig1 --rows 20 --cols 20 --complete-n 40
//! ```
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 iteration cap hit,
//! 4 oracle capacity exceeded.
//!
//! # Results file (`solve`)
//!
//! | field          | meaning                                                             |
//! |----------------|---------------------------------------------------------------------|
//! | `algorithm`    | `diffusion`, `double_loop` or `oracle`                              |
//! | `beta`         | number, or `"inf"`                                                  |
//! | `converged`    | stopping tolerance reached                                          |
//! | `iterations`   | sweeps (diffusion) or outer iterations (double loop)                |
//! | `inner_sweeps` | total inner sweeps (double loop only)                               |
//! | `dual_value`   | `U(θ^α)`; `U(θ̂^α)` for the double loop; `Φ` for the oracle          |
//! | `residual`     | diffusion fixed-point residual, or BP residual for the double loop  |
//! | `beliefs`      | `{scale, unary, factors}`; `scale` is `log` or `probability`        |
//! | `decoded`      | `{eps, truncated, solutions: [{assignment, value}]}`                |
//! | `trace_path`   | trace CSV written alongside, or `null`                              |
//!
//! Log-scale beliefs are ⊕-normalized per table and may contain `"-inf"`.
//! Decoding rounds the solver's final tables (`θ^α`, or `θ̂^α` for the double
//! loop) to their active mask and enumerates CSP solutions; the oracle
//! reports its exact ground states instead.
//!
//! The BP residual is the mean over pairs `(a, v)` of the spread
//! `max - min` over `x_v` of `⊕_{x_{a∖v}} [θ^α_a + Σ_{u∈a} θ^α_u] - θ^α_v(x_v)`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::csp_decode;
use crate::diffusion::{DiffusionState, SweepOrder, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use crate::double_loop::{
    DoubleLoopState, InnerTolerance, RunConfig, TildeInit, DEFAULT_MASK_EPS, DEFAULT_MAX_OUTER,
    DEFAULT_OUTER_TOL,
};
use crate::error::{Error, Result};
use crate::generators::{generate, InstanceSpec, Interaction, Topology};
use crate::model::io::{write_atomic, JsonReal};
use crate::model::{Assignment, Model, Potentials};
use crate::oracle::{BeliefScale, BeliefVector, Oracle, DEFAULT_ENUMERATION_CAP};
use crate::semiring::Temperature;

/// Default active-mask band for decoding.
pub const DEFAULT_EPS_ACTIVE: f64 = 1e-6;
/// Default cap on decoded solutions written to a results file.
pub const DEFAULT_MAX_SOLUTIONS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "bethe", version, about = "Diffusion and double-loop Bethe inference on discrete models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random instance as a JSON model.
    Generate(GenerateArgs),
    /// Run a solver and write a results file.
    Solve(SolveArgs),
    /// Run a solver and compare it with exhaustive enumeration.
    Compare(CompareArgs),
    /// Run the nine convergence-trace cells and write a CSV bundle.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TopologyArg {
    Grid,
    Complete,
    Chain,
    RandomTree,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InteractionArg {
    Random,
    Attractive,
    Repulsive,
    Mixed,
    CircularDistance,
    SupermodularIsing,
}

impl From<InteractionArg> for Interaction {
    fn from(i: InteractionArg) -> Self {
        match i {
            InteractionArg::Random => Interaction::Random,
            InteractionArg::Attractive => Interaction::Attractive,
            InteractionArg::Repulsive => Interaction::Repulsive,
            InteractionArg::Mixed => Interaction::Mixed,
            InteractionArg::CircularDistance => Interaction::CircularDistance,
            InteractionArg::SupermodularIsing => Interaction::SupermodularIsing,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    topology: TopologyArg,
    /// Grid rows.
    #[arg(long, default_value_t = 1)]
    rows: usize,
    /// Grid columns.
    #[arg(long, default_value_t = 1)]
    cols: usize,
    /// Vertex count for complete, chain and random-tree topologies.
    #[arg(long, short = 'n', default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    labels: usize,
    #[arg(long, value_enum, default_value = "random")]
    interaction: InteractionArg,
    #[arg(long, default_value_t = 1.0)]
    unary_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pairwise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; the model goes to stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Diffusion,
    DoubleLoop,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    Forward,
    ForwardBackward,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TildeArg {
    Zero,
    Random,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "diffusion")]
    algorithm: Algorithm,
    /// Inverse temperature: a positive number or `inf`.
    #[arg(long, default_value = "inf")]
    beta: String,
    /// Diffusion stopping tolerance (mean residual).
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SWEEPS)]
    max_sweeps: usize,
    #[arg(long, value_enum, default_value = "forward")]
    order: OrderArg,
    /// Double-loop stopping tolerance on the BP residual.
    #[arg(long, default_value_t = DEFAULT_OUTER_TOL)]
    outer_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_OUTER)]
    max_outer: usize,
    /// Fixed inner tolerance; by default `max(floor, 1e-3 · previous BP residual)`.
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Floor of the default inner tolerance schedule.
    #[arg(long, default_value_t = 1e-9)]
    inner_floor: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SWEEPS)]
    max_inner: usize,
    #[arg(long, value_enum, default_value = "zero")]
    tilde_init: TildeArg,
    /// Seed for `--tilde-init random`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Active-mask band used for decoding.
    #[arg(long, default_value_t = DEFAULT_EPS_ACTIVE)]
    eps_active: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SOLUTIONS)]
    max_solutions: usize,
}

#[derive(Debug, Args)]
struct SolveArgs {
    model: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Results path; stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    model: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Joint-state cap for the oracle.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP as u64)]
    cap: u64,
    /// Report path; stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long, default_value_t = 15)]
    complete_n: usize,
    /// Labels for every cell except the two-label repulsive grid.
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_OUTER_TOL)]
    outer_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_OUTER)]
    max_outer: usize,
    #[arg(long, default_value_t = 1e-9)]
    inner_floor: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SWEEPS)]
    max_inner: usize,
    #[arg(long, default_value_t = DEFAULT_MASK_EPS)]
    mask_eps: f64,
    /// Tolerance on `|ΔU∞(θ̂)|` for the key-observation verdict.
    #[arg(long, default_value_t = 1e-6)]
    u_tol: f64,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

/// Entry point of the `bethe` binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let res = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bethe: {e}");
            e.exit_code()
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<i32> {
    let topology = match a.topology {
        TopologyArg::Grid => Topology::Grid {
            rows: a.rows,
            cols: a.cols,
        },
        TopologyArg::Complete => Topology::Complete(a.n),
        TopologyArg::Chain => Topology::Chain(a.n),
        TopologyArg::RandomTree => Topology::RandomTree(a.n),
    };
    let spec = InstanceSpec {
        topology,
        labels: a.labels,
        interaction: a.interaction.into(),
        unary_scale: a.unary_scale,
        pairwise_scale: a.pairwise_scale,
        seed: a.seed,
    };
    let m = generate(&spec)?;
    emit(a.output.as_deref(), &m.to_json_string())?;
    eprintln!(
        "generated {} vars, {} edges, {} labels",
        m.num_vars(),
        m.num_factors(),
        a.labels
    );
    Ok(0)
}

/// Solver settings shared by `solve`, `compare` and the Python bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub algorithm: Algorithm,
    pub temperature: Temperature,
    pub tol: f64,
    pub max_sweeps: usize,
    pub order: SweepOrder,
    pub run: RunConfig,
    pub tilde_init: TildeInit,
    pub eps_active: f64,
    pub max_solutions: usize,
}

impl SolveOptions {
    pub fn new(algorithm: Algorithm, temperature: Temperature) -> Self {
        SolveOptions {
            algorithm,
            temperature,
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            order: SweepOrder::Forward,
            run: RunConfig::default(),
            tilde_init: TildeInit::Zero,
            eps_active: DEFAULT_EPS_ACTIVE,
            max_solutions: DEFAULT_MAX_SOLUTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Usage(format!("{name} must be finite and > 0, got {x}")))
            }
        };
        pos("--tol", self.tol)?;
        pos("--outer-tol", self.run.outer_tol)?;
        match self.run.inner_tol {
            InnerTolerance::Fixed(t) => pos("--inner-tol", t)?,
            InnerTolerance::Schedule { floor, .. } => pos("--inner-floor", floor)?,
        }
        if !(self.eps_active.is_finite() && self.eps_active >= 0.0) {
            return Err(Error::Usage(format!("--eps-active must be >= 0, got {}", self.eps_active)));
        }
        Ok(())
    }
}

impl SolverArgs {
    fn options(&self) -> Result<SolveOptions> {
        let temperature: Temperature = self.beta.parse()?;
        let o = SolveOptions {
            algorithm: self.algorithm,
            temperature,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            order: match self.order {
                OrderArg::Forward => SweepOrder::Forward,
                OrderArg::ForwardBackward => SweepOrder::ForwardBackward,
            },
            run: RunConfig {
                outer_tol: self.outer_tol,
                max_outer: self.max_outer,
                inner_tol: match self.inner_tol {
                    Some(t) => InnerTolerance::Fixed(t),
                    None => InnerTolerance::Schedule {
                        floor: self.inner_floor,
                        factor: 1e-3,
                    },
                },
                max_inner: self.max_inner,
                mask_eps: self.eps_active,
            },
            tilde_init: match self.tilde_init {
                TildeArg::Zero => TildeInit::Zero,
                TildeArg::Random => TildeInit::Random(self.seed),
            },
            eps_active: self.eps_active,
            max_solutions: self.max_solutions,
        };
        o.validate()?;
        Ok(o)
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum BetaJson {
    Finite(f64),
    Inf(&'static str),
}

impl From<Temperature> for BetaJson {
    fn from(t: Temperature) -> Self {
        match t {
            Temperature::Finite(b) => BetaJson::Finite(b),
            Temperature::Infinite => BetaJson::Inf("inf"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BeliefsJson {
    pub scale: &'static str,
    pub unary: Vec<Vec<JsonReal>>,
    pub factors: Vec<Vec<JsonReal>>,
}

impl From<&BeliefVector> for BeliefsJson {
    fn from(b: &BeliefVector) -> Self {
        let conv = |ts: &[Vec<f64>]| ts.iter().map(|t| t.iter().map(|&x| JsonReal(x)).collect()).collect();
        BeliefsJson {
            scale: match b.scale {
                BeliefScale::Probability => "probability",
                BeliefScale::Log(_) => "log",
            },
            unary: conv(&b.tables.unary),
            factors: conv(&b.tables.factors),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodedSolution {
    pub assignment: Assignment,
    pub value: JsonReal,
}

#[derive(Debug, Clone, Serialize)]
pub struct Decoded {
    pub eps: f64,
    pub truncated: bool,
    pub solutions: Vec<DecodedSolution>,
}

/// Contents of a results file; `trace_csv` is written separately.
#[derive(Debug, Clone, Serialize)]
pub struct SolveOutcome {
    pub algorithm: Algorithm,
    pub beta: BetaJson,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_sweeps: Option<usize>,
    pub dual_value: JsonReal,
    pub residual: f64,
    pub beliefs: BeliefsJson,
    pub decoded: Decoded,
    pub trace_path: Option<String>,
    #[serde(skip)]
    pub belief_vector: Option<BeliefVector>,
    #[serde(skip)]
    pub trace_csv: String,
}

fn decode(m: &Model, tables: &Potentials, eps: f64, limit: usize) -> Result<Decoded> {
    let sols = csp_decode::decode_ground_states(m, tables, eps, limit)?;
    Ok(Decoded {
        eps,
        truncated: sols.truncated,
        solutions: sols
            .assignments
            .into_iter()
            .map(|x| DecodedSolution {
                value: JsonReal(m.evaluate(&x).expect("CSP solutions fit the model")),
                assignment: x,
            })
            .collect(),
    })
}

/// Runs the configured solver on `m`.
pub fn solve(m: &Model, o: &SolveOptions, oracle: Oracle) -> Result<SolveOutcome> {
    o.validate()?;
    let t = o.temperature;
    match o.algorithm {
        Algorithm::Diffusion => {
            let mut s = DiffusionState::new(m.clone(), t);
            s.set_order(o.order);
            let rep = s.run_to_convergence(o.tol, o.max_sweeps);
            let beliefs = s.pseudo_marginals();
            let mut csv = String::from("sweep,residual,max_violation,dual_value\n");
            for r in &rep.trace {
                csv.push_str(&format!(
                    "{},{:.12e},{:.12e},{:.12e}\n",
                    r.sweep, r.residual, r.max_violation, r.dual_value
                ));
            }
            Ok(SolveOutcome {
                algorithm: o.algorithm,
                beta: t.into(),
                converged: rep.converged,
                iterations: rep.iterations,
                inner_sweeps: None,
                dual_value: JsonReal(rep.dual_value),
                residual: rep.final_residual,
                beliefs: (&beliefs_for_output(&beliefs)).into(),
                decoded: decode(m, &s.reparameterized(), o.eps_active, o.max_solutions)?,
                trace_path: None,
                belief_vector: Some(beliefs),
                trace_csv: csv,
            })
        }
        Algorithm::DoubleLoop => {
            let mut s = DoubleLoopState::new(m.clone(), t, o.tilde_init);
            s.set_order(o.order);
            let trace = s.run(&o.run);
            let beliefs = s.bp_marginals();
            Ok(SolveOutcome {
                algorithm: o.algorithm,
                beta: t.into(),
                converged: trace.converged,
                iterations: trace.records.len(),
                inner_sweeps: Some(s.inner_sweeps()),
                dual_value: JsonReal(s.u_hat()),
                residual: trace.final_bp_residual(),
                beliefs: (&beliefs_for_output(&beliefs)).into(),
                decoded: decode(m, &s.hat_tables(), o.eps_active, o.max_solutions)?,
                trace_path: None,
                belief_vector: Some(beliefs),
                trace_csv: trace.to_csv(),
            })
        }
        Algorithm::Oracle => {
            let phi = oracle.log_partition(m, t)?;
            let beliefs = oracle.exact_marginals(m, t)?;
            let gs = oracle.ground_states(m)?;
            let truncated = gs.len() > o.max_solutions;
            Ok(SolveOutcome {
                algorithm: o.algorithm,
                beta: t.into(),
                converged: true,
                iterations: 0,
                inner_sweeps: None,
                dual_value: JsonReal(phi),
                residual: 0.0,
                beliefs: (&beliefs).into(),
                decoded: Decoded {
                    eps: 0.0,
                    truncated,
                    solutions: gs
                        .into_iter()
                        .take(o.max_solutions)
                        .map(|x| DecodedSolution {
                            value: JsonReal(m.evaluate(&x).expect("enumerated states fit the model")),
                            assignment: x,
                        })
                        .collect(),
                },
                trace_path: None,
                belief_vector: Some(beliefs),
                trace_csv: String::new(),
            })
        }
    }
}

/// Finite-temperature beliefs are reported as probabilities.
fn beliefs_for_output(b: &BeliefVector) -> BeliefVector {
    b.to_probability().unwrap_or_else(|| b.clone())
}

fn cmd_solve(a: SolveArgs) -> Result<i32> {
    let o = a.solver.options()?;
    let m = Model::read_json(&a.model)?;
    let mut out = solve(&m, &o, Oracle::default())?;
    if let Some(p) = &a.trace {
        write_atomic(p, out.trace_csv.as_bytes())?;
        out.trace_path = Some(p.display().to_string());
    }
    emit(a.output.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(if out.converged { 0 } else { 3 })
}

#[derive(Debug, Clone, Serialize)]
pub struct BeliefError {
    pub unary: f64,
    pub factor: f64,
}

/// Solver output measured against exhaustive enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub algorithm: Algorithm,
    pub beta: BetaJson,
    pub converged: bool,
    /// Max-abs error against exact marginals (finite `β`, probability scale)
    /// or max-marginals (`β = ∞`, max-normalized).
    pub belief_error: BeliefError,
    pub dual_value: JsonReal,
    pub log_partition: JsonReal,
    /// `U - Φ`.
    pub dual_gap: f64,
    pub max_energy: JsonReal,
    pub decoded_count: usize,
    pub decoded_truncated: bool,
    pub best_decoded_value: Option<JsonReal>,
    /// `max energy - best decoded energy`, absent when nothing was decoded.
    pub decoded_energy_gap: Option<f64>,
    pub ground_states: usize,
    pub ground_state_sets_equal: bool,
}

/// Runs `o` on `m` and compares with the oracle.
pub fn compare(m: &Model, o: &SolveOptions, oracle: Oracle) -> Result<CompareReport> {
    let t = o.temperature;
    let phi = oracle.log_partition(m, t)?;
    let exact = oracle.exact_marginals(m, t)?;
    let max_energy = oracle.log_partition(m, Temperature::Infinite)?;
    let gs = oracle.ground_states(m)?;
    let out = solve(m, o, oracle)?;
    let b = out.belief_vector.as_ref().expect("solvers return beliefs");
    let b = beliefs_for_output(b);
    let (eu, ef) = b.max_abs_diff(&exact);
    let best = out
        .decoded
        .solutions
        .iter()
        .map(|s| s.value.0)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let decoded: Vec<&Assignment> = out.decoded.solutions.iter().map(|s| &s.assignment).collect();
    let sets_equal = !out.decoded.truncated && decoded.len() == gs.len() && decoded.iter().zip(&gs).all(|(a, b)| *a == b);
    Ok(CompareReport {
        algorithm: o.algorithm,
        beta: t.into(),
        converged: out.converged,
        belief_error: BeliefError {
            unary: eu,
            factor: ef,
        },
        dual_value: out.dual_value,
        log_partition: JsonReal(phi),
        dual_gap: out.dual_value.0 - phi,
        max_energy: JsonReal(max_energy),
        decoded_count: decoded.len(),
        decoded_truncated: out.decoded.truncated,
        best_decoded_value: best.map(JsonReal),
        decoded_energy_gap: best.map(|v| max_energy - v),
        ground_states: gs.len(),
        ground_state_sets_equal: sets_equal,
    })
}

fn cmd_compare(a: CompareArgs) -> Result<i32> {
    let mut o = a.solver.options()?;
    // every decoded state is needed for the set comparison
    o.max_solutions = o.max_solutions.max(DEFAULT_ENUMERATION_CAP as usize);
    let m = Model::read_json(&a.model)?;
    let rep = compare(&m, &o, Oracle::with_cap(a.cap as u128))?;
    emit(a.output.as_deref(), &(serde_json::to_string_pretty(&rep)? + "\n"))?;
    Ok(if rep.converged { 0 } else { 3 })
}

/// One of the nine convergence-trace cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub topology: Topology,
    pub labels: usize,
    pub interaction: Interaction,
}

impl Cell {
    pub fn name(&self) -> String {
        let topo = match self.topology {
            Topology::Grid { .. } => "grid",
            Topology::Complete(_) => "complete",
            Topology::Chain(_) => "chain",
            Topology::RandomTree(_) => "tree",
        };
        format!("{topo}_{}_k{}", self.interaction, self.labels)
    }
}

/// The nine cells in row-major figure order.
pub fn figure_cells(rows: usize, cols: usize, complete_n: usize, labels: usize) -> Vec<Cell> {
    let grid = Topology::Grid { rows, cols };
    let complete = Topology::Complete(complete_n);
    let cell = |topology, interaction, labels| Cell {
        topology,
        labels,
        interaction,
    };
    vec![
        cell(grid, Interaction::Random, labels),
        cell(grid, Interaction::Attractive, labels),
        cell(grid, Interaction::Repulsive, labels),
        cell(grid, Interaction::Repulsive, 2),
        cell(grid, Interaction::Mixed, labels),
        cell(grid, Interaction::CircularDistance, labels),
        cell(complete, Interaction::Random, labels),
        cell(complete, Interaction::Attractive, labels),
        cell(complete, Interaction::Repulsive, labels),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub outer_iter: usize,
    pub delta_u: f64,
    pub mask_changed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub name: String,
    pub labels: usize,
    pub interaction: String,
    pub num_vars: usize,
    pub num_edges: usize,
    pub csv: String,
    pub model: String,
    pub converged: bool,
    pub hit_cap: bool,
    pub outer_iterations: usize,
    pub inner_sweeps: usize,
    pub initial_bp_residual: f64,
    pub final_bp_residual: f64,
    /// `log10(initial / final)` BP residual.
    pub decades: f64,
    /// At least four decades of decay, or the cap was hit (flagged in `hit_cap`).
    pub decay_ok: bool,
    pub key_observation_holds: bool,
    pub key_observation_violations: Vec<Violation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    pub complete_n: usize,
    pub labels: usize,
    pub seed: u64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner_floor: f64,
    pub max_inner: usize,
    pub mask_eps: f64,
    pub u_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub csv_header: &'static str,
    pub cells: Vec<CellResult>,
}

fn run_cell(cell: &Cell, cfg: &ExperimentConfig, dir: &Path) -> Result<CellResult> {
    let name = cell.name();
    let m = generate(&InstanceSpec::new(cell.topology, cell.labels, cell.interaction, cfg.seed))?;
    let model_file = format!("{name}.model.json");
    m.write_json(dir.join(&model_file))?;
    let mut s = DoubleLoopState::new(m.clone(), Temperature::Infinite, TildeInit::Zero);
    let trace = s.run(&RunConfig {
        outer_tol: cfg.outer_tol,
        max_outer: cfg.max_outer,
        inner_tol: InnerTolerance::Schedule {
            floor: cfg.inner_floor,
            factor: 1e-3,
        },
        max_inner: cfg.max_inner,
        mask_eps: cfg.mask_eps,
    });
    let csv_file = format!("{name}.csv");
    write_atomic(&dir.join(&csv_file), trace.to_csv().as_bytes())?;
    let violations: Vec<Violation> = trace
        .key_observation_violations(cfg.u_tol)
        .into_iter()
        .map(|(outer_iter, delta_u, mask_changed)| Violation {
            outer_iter,
            delta_u,
            mask_changed,
        })
        .collect();
    let (r0, r1) = (trace.initial_bp_residual, trace.final_bp_residual());
    let decades = if r1 > 0.0 { (r0 / r1).log10() } else { f64::INFINITY };
    Ok(CellResult {
        name,
        labels: cell.labels,
        interaction: cell.interaction.to_string(),
        num_vars: m.num_vars(),
        num_edges: m.num_factors(),
        csv: csv_file,
        model: model_file,
        converged: trace.converged,
        hit_cap: !trace.converged,
        outer_iterations: trace.records.len(),
        inner_sweeps: s.inner_sweeps(),
        initial_bp_residual: r0,
        final_bp_residual: r1,
        decades,
        decay_ok: decades >= 4.0 || !trace.converged,
        key_observation_holds: violations.is_empty(),
        key_observation_violations: violations,
        error: None,
    })
}

/// Runs every cell (in parallel) and writes `manifest.json` plus one CSV and
/// one model file per cell into `dir`.
pub fn run_experiment(cells: &[Cell], cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|c| {
            let res = std::panic::catch_unwind(|| run_cell(c, cfg, dir));
            let err = match res {
                Ok(Ok(r)) => return r,
                Ok(Err(e)) => e.to_string(),
                Err(_) => "solver panicked".to_string(),
            };
            CellResult {
                name: c.name(),
                labels: c.labels,
                interaction: c.interaction.to_string(),
                num_vars: c.topology.num_vars(),
                num_edges: 0,
                csv: String::new(),
                model: String::new(),
                converged: false,
                hit_cap: false,
                outer_iterations: 0,
                inner_sweeps: 0,
                initial_bp_residual: f64::NAN,
                final_bp_residual: f64::NAN,
                decades: f64::NAN,
                decay_ok: false,
                key_observation_holds: false,
                key_observation_violations: Vec::new(),
                error: Some(err),
            }
        })
        .collect();
    let manifest = Manifest {
        config: cfg.clone(),
        csv_header: "outer_iter,log10_bp_residual,u_hat,mask_changed,inner_sweeps",
        cells: results,
    };
    write_atomic(
        &dir.join("manifest.json"),
        (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
    )?;
    Ok(manifest)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<i32> {
    if a.labels < 2 || a.rows == 0 || a.cols == 0 || a.complete_n == 0 {
        return Err(Error::Usage("sizes must be >= 1 and labels >= 2".into()));
    }
    for (name, x) in [("--outer-tol", a.outer_tol), ("--inner-floor", a.inner_floor)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::Usage(format!("{name} must be finite and > 0, got {x}")));
        }
    }
    let cfg = ExperimentConfig {
        rows: a.rows,
        cols: a.cols,
        complete_n: a.complete_n,
        labels: a.labels,
        seed: a.seed,
        outer_tol: a.outer_tol,
        max_outer: a.max_outer,
        inner_floor: a.inner_floor,
        max_inner: a.max_inner,
        mask_eps: a.mask_eps,
        u_tol: a.u_tol,
    };
    let cells = figure_cells(a.rows, a.cols, a.complete_n, a.labels);
    let start = std::time::Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let manifest = pool.install(|| run_experiment(&cells, &cfg, &a.out_dir))?;
    for c in &manifest.cells {
        match &c.error {
            Some(e) => eprintln!("{:<28} error: {e}", c.name),
            None => eprintln!(
                "{:<28} outer {:>4}  residual {:.2e} -> {:.2e} ({:.1} decades){}  key observation {}",
                c.name,
                c.outer_iterations,
                c.initial_bp_residual,
                c.final_bp_residual,
                c.decades,
                if c.hit_cap { " CAP" } else { "" },
                if c.key_observation_holds { "holds" } else { "VIOLATED" }
            ),
        }
    }
    eprintln!("{} cells in {:.1?}", manifest.cells.len(), start.elapsed());
    Ok(0)
}
