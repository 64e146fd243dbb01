//! Problem instances: a hypergraph with finite domains and log-domain
//! potentials, plus the message vectors that reparameterize them.
//!
//! Factor tables use a mixed-radix row-major layout over the hyperedge's
//! variables in increasing index order (the last variable varies fastest).
//! Hyperedges are kept in lexicographic order of their variable tuples, and
//! the (hyperedge, position) pairs are numbered in that same order. Every
//! solver sweeps pairs in this numbering.

use crate::error::{Error, Result};
use crate::semiring::{ExtReal, Temperature};

pub mod io;

/// A joint assignment: one state index per variable.
pub type Assignment = Vec<usize>;

/// Variables with finite domains and hyperedges of arity at least two.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    domains: Vec<usize>,
    edges: Vec<Vec<usize>>,
    strides: Vec<Vec<usize>>,
    table_lens: Vec<usize>,
    // per variable: (edge, position in edge)
    incidence: Vec<Vec<(usize, usize)>>,
    pair_start: Vec<usize>,
    pair_offsets: Vec<usize>,
}

impl Hypergraph {
    /// Builds the hypergraph, sorting hyperedges lexicographically.
    pub fn new(domains: Vec<usize>, mut edges: Vec<Vec<usize>>) -> Result<Self> {
        for (v, &d) in domains.iter().enumerate() {
            if d == 0 {
                return Err(Error::Validation(format!("variable {v} has an empty domain")));
            }
        }
        for (k, e) in edges.iter().enumerate() {
            check_edge(&domains, e).map_err(|m| Error::Validation(format!("factor #{k}: {m}")))?;
        }
        edges.sort();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("duplicate factor over {:?}", w[0])));
        }
        Ok(Self::build(domains, edges))
    }

    fn build(domains: Vec<usize>, edges: Vec<Vec<usize>>) -> Self {
        let mut strides = Vec::with_capacity(edges.len());
        let mut table_lens = Vec::with_capacity(edges.len());
        let mut incidence = vec![Vec::new(); domains.len()];
        let mut pair_start = Vec::with_capacity(edges.len() + 1);
        let mut pair_offsets = vec![0];
        let mut npairs = 0;
        for (e, vars) in edges.iter().enumerate() {
            let mut s = vec![0; vars.len()];
            let mut acc = 1;
            for (p, &v) in vars.iter().enumerate().rev() {
                s[p] = acc;
                acc *= domains[v];
            }
            strides.push(s);
            table_lens.push(acc);
            pair_start.push(npairs);
            for (p, &v) in vars.iter().enumerate() {
                incidence[v].push((e, p));
                let last = *pair_offsets.last().unwrap();
                pair_offsets.push(last + domains[v]);
            }
            npairs += vars.len();
        }
        pair_start.push(npairs);
        Hypergraph {
            domains,
            edges,
            strides,
            table_lens,
            incidence,
            pair_start,
            pair_offsets,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.domains.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_pairs(&self) -> usize {
        *self.pair_start.last().unwrap()
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn domain(&self, v: usize) -> usize {
        self.domains[v]
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &[usize] {
        &self.edges[e]
    }

    pub fn table_len(&self, e: usize) -> usize {
        self.table_lens[e]
    }

    pub fn strides(&self, e: usize) -> &[usize] {
        &self.strides[e]
    }

    /// `(edge, position)` for every hyperedge containing `v`.
    pub fn incident(&self, v: usize) -> &[(usize, usize)] {
        &self.incidence[v]
    }

    /// Number of hyperedges containing `v`.
    pub fn degree(&self, v: usize) -> usize {
        self.incidence[v].len()
    }

    /// Canonical id of the pair `(edge, position)`.
    #[inline]
    pub fn pair_id(&self, e: usize, pos: usize) -> usize {
        self.pair_start[e] + pos
    }

    /// Iterates pairs `(edge, position)` in canonical sweep order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(e, vars)| (0..vars.len()).map(move |p| (e, p)))
    }

    /// State of the variable at `pos` within joint index `idx` of edge `e`.
    #[inline]
    pub fn state_at(&self, e: usize, pos: usize, idx: usize) -> usize {
        (idx / self.strides[e][pos]) % self.domains[self.edges[e][pos]]
    }

    /// Joint index of edge `e` for per-position states.
    pub fn factor_index(&self, e: usize, states: &[usize]) -> usize {
        states.iter().zip(&self.strides[e]).map(|(s, st)| s * st).sum()
    }

    /// Joint index of edge `e` under a full assignment.
    #[inline]
    pub fn factor_index_of(&self, e: usize, x: &[usize]) -> usize {
        self.edges[e]
            .iter()
            .zip(&self.strides[e])
            .map(|(&v, st)| x[v] * st)
            .sum()
    }

    /// Number of joint assignments, saturating at `u128::MAX`.
    pub fn joint_states(&self) -> u128 {
        self.domains
            .iter()
            .try_fold(1u128, |acc, &d| acc.checked_mul(d as u128))
            .unwrap_or(u128::MAX)
    }

    /// Position of `v` in edge `e`, if present.
    pub fn position(&self, e: usize, v: usize) -> Option<usize> {
        self.edges[e].binary_search(&v).ok()
    }

    /// Index of the hyperedge with exactly these (sorted) variables.
    pub fn find_edge(&self, vars: &[usize]) -> Option<usize> {
        self.edges.binary_search_by(|e| e.as_slice().cmp(vars)).ok()
    }

    fn check_assignment(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.num_vars() {
            return Err(Error::Usage(format!(
                "assignment has {} entries, model has {} variables",
                x.len(),
                self.num_vars()
            )));
        }
        for (v, (&s, &d)) in x.iter().zip(&self.domains).enumerate() {
            if s >= d {
                return Err(Error::Usage(format!(
                    "state {s} of variable {v} is outside its domain of size {d}"
                )));
            }
        }
        Ok(())
    }
}

fn check_edge(domains: &[usize], e: &[usize]) -> std::result::Result<(), String> {
    if e.len() < 2 {
        return Err(format!("hyperedge {e:?} has fewer than two variables"));
    }
    if e.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("variables {e:?} are not strictly increasing"));
    }
    if let Some(&v) = e.iter().find(|&&v| v >= domains.len()) {
        return Err(format!("variable {v} out of range (model has {})", domains.len()));
    }
    Ok(())
}

/// Per-variable and per-hyperedge tables of log-domain values.
///
/// Used for potentials `θ`, for reparameterized potentials, and for beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub unary: Vec<Vec<ExtReal>>,
    pub factors: Vec<Vec<ExtReal>>,
}

impl Potentials {
    pub fn zeros(graph: &Hypergraph) -> Self {
        Potentials {
            unary: graph.domains().iter().map(|&d| vec![0.0; d]).collect(),
            factors: (0..graph.num_edges())
                .map(|e| vec![0.0; graph.table_len(e)])
                .collect(),
        }
    }

    /// All tables, unary first.
    pub fn tables(&self) -> impl Iterator<Item = &[ExtReal]> {
        self.unary
            .iter()
            .chain(self.factors.iter())
            .map(Vec::as_slice)
    }

    fn check_shapes(&self, graph: &Hypergraph) -> Result<()> {
        if self.unary.len() != graph.num_vars() || self.factors.len() != graph.num_edges() {
            return Err(Error::Usage("table count does not match the hypergraph".into()));
        }
        for (v, t) in self.unary.iter().enumerate() {
            if t.len() != graph.domain(v) {
                return Err(Error::Usage(format!("unary table {v} has wrong length")));
            }
        }
        for (e, t) in self.factors.iter().enumerate() {
            if t.len() != graph.table_len(e) {
                return Err(Error::Usage(format!("factor table {e} has wrong length")));
            }
        }
        Ok(())
    }
}

/// Where a validation problem was found, in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Location {
    Domains,
    Unary(usize),
    Factor(usize),
}

pub(crate) type Located = (Location, String);

/// Input-order factor used when constructing a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub vars: Vec<usize>,
    pub table: Vec<ExtReal>,
}

/// A hypergraph together with its potentials `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    graph: Hypergraph,
    theta: Potentials,
}

impl Model {
    /// Validates and builds a model. Factors are reordered into canonical order.
    pub fn new(domains: Vec<usize>, unary: Vec<Vec<ExtReal>>, factors: Vec<Factor>) -> Result<Self> {
        Self::new_located(domains, unary, factors).map_err(|(loc, msg)| {
            Error::Validation(match loc {
                Location::Domains => format!("domains: {msg}"),
                Location::Unary(v) => format!("unary table {v}: {msg}"),
                Location::Factor(k) => format!("factor #{k}: {msg}"),
            })
        })
    }

    pub(crate) fn new_located(
        domains: Vec<usize>,
        unary: Vec<Vec<ExtReal>>,
        factors: Vec<Factor>,
    ) -> std::result::Result<Self, Located> {
        if let Some(v) = domains.iter().position(|&d| d == 0) {
            return Err((Location::Domains, format!("variable {v} has an empty domain")));
        }
        if unary.len() != domains.len() {
            return Err((
                Location::Domains,
                format!("{} domains but {} unary tables", domains.len(), unary.len()),
            ));
        }
        for (v, t) in unary.iter().enumerate() {
            if t.len() != domains[v] {
                return Err((
                    Location::Unary(v),
                    format!("expected {} entries, found {}", domains[v], t.len()),
                ));
            }
            check_values(t).map_err(|m| (Location::Unary(v), m))?;
        }
        for (k, f) in factors.iter().enumerate() {
            check_edge(&domains, &f.vars).map_err(|m| (Location::Factor(k), m))?;
            let len: usize = f.vars.iter().map(|&v| domains[v]).product();
            if f.table.len() != len {
                return Err((
                    Location::Factor(k),
                    format!("expected {len} table entries, found {}", f.table.len()),
                ));
            }
            check_values(&f.table).map_err(|m| (Location::Factor(k), m))?;
        }
        let mut order: Vec<usize> = (0..factors.len()).collect();
        order.sort_by(|&a, &b| factors[a].vars.cmp(&factors[b].vars));
        if let Some(w) = order.windows(2).find(|w| factors[w[0]].vars == factors[w[1]].vars) {
            return Err((
                Location::Factor(w[0].max(w[1])),
                format!("duplicate factor over {:?}", factors[w[0]].vars),
            ));
        }
        let edges = order.iter().map(|&k| factors[k].vars.clone()).collect();
        let mut slots: Vec<Option<Factor>> = factors.into_iter().map(Some).collect();
        let tables = order
            .iter()
            .map(|&k| slots[k].take().unwrap().table)
            .collect();
        let graph = Hypergraph::build(domains, edges);
        let model = Model {
            graph,
            theta: Potentials {
                unary,
                factors: tables,
            },
        };
        model
            .compatibility_violation()
            .map_or(Ok(()), |(e, p, xv)| {
                Err((
                    Location::Factor(order[e]),
                    format!(
                        "incompatible -inf pattern at variable {} state {xv}: unary and factor \
                         max-reduction disagree on finiteness",
                        model.graph.edge(e)[p]
                    ),
                ))
            })?;
        Ok(model)
    }

    /// Builds a model from an existing hypergraph; tables must already be in canonical order.
    pub fn from_potentials(graph: Hypergraph, theta: Potentials) -> Result<Self> {
        theta.check_shapes(&graph)?;
        for t in theta.tables() {
            check_values(t).map_err(Error::Validation)?;
        }
        let model = Model { graph, theta };
        if let Some((e, p, xv)) = model.compatibility_violation() {
            return Err(Error::Validation(format!(
                "incompatible -inf pattern at factor {e}, variable {}, state {xv}",
                model.graph.edge(e)[p]
            )));
        }
        Ok(model)
    }

    pub fn graph(&self) -> &Hypergraph {
        &self.graph
    }

    pub fn potentials(&self) -> &Potentials {
        &self.theta
    }

    pub fn unary(&self, v: usize) -> &[ExtReal] {
        &self.theta.unary[v]
    }

    pub fn factor(&self, e: usize) -> &[ExtReal] {
        &self.theta.factors[e]
    }

    pub fn num_vars(&self) -> usize {
        self.graph.num_vars()
    }

    pub fn num_factors(&self) -> usize {
        self.graph.num_edges()
    }

    /// `⟨θ, δ(x)⟩`: the energy of a full assignment.
    pub fn evaluate(&self, x: &[usize]) -> Result<ExtReal> {
        self.graph.check_assignment(x)?;
        Ok(self.evaluate_unchecked(x))
    }

    #[inline]
    pub(crate) fn evaluate_unchecked(&self, x: &[usize]) -> ExtReal {
        let u: f64 = self.theta.unary.iter().zip(x).map(|(t, &s)| t[s]).sum();
        let f: f64 = self
            .theta
            .factors
            .iter()
            .enumerate()
            .map(|(e, t)| t[self.graph.factor_index_of(e, x)])
            .sum();
        u + f
    }

    /// `θ^α_v(x_v) = θ_v(x_v) - Σ_{a∋v} α_{av}(x_v)`.
    pub fn reparam_unary(&self, msgs: &MessageVector, v: usize, xv: usize) -> ExtReal {
        let t = self.theta.unary[v][xv];
        t - self
            .graph
            .incident(v)
            .iter()
            .map(|&(e, p)| msgs.get(&self.graph, e, p)[xv])
            .sum::<f64>()
    }

    /// `θ^α_a(x_a) = θ_a(x_a) + Σ_{v∈a} α_{av}(x_v)` for joint index `idx`.
    pub fn reparam_factor(&self, msgs: &MessageVector, e: usize, idx: usize) -> ExtReal {
        let t = self.theta.factors[e][idx];
        t + (0..self.graph.edge(e).len())
            .map(|p| msgs.get(&self.graph, e, p)[self.graph.state_at(e, p, idx)])
            .sum::<f64>()
    }

    /// Writes `θ^α_v` into `out`.
    pub(crate) fn reparam_unary_table(&self, msgs: &MessageVector, v: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.theta.unary[v]);
        for &(e, p) in self.graph.incident(v) {
            for (o, m) in out.iter_mut().zip(msgs.get(&self.graph, e, p)) {
                *o -= m;
            }
        }
    }

    /// Writes `θ^α_a` into `out`.
    pub(crate) fn reparam_factor_table(&self, msgs: &MessageVector, e: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.theta.factors[e]);
        add_unary_terms(&self.graph, e, out, |p, s| msgs.get(&self.graph, e, p)[s]);
    }

    /// All reparameterized tables `θ^α`.
    pub fn reparam_potentials(&self, msgs: &MessageVector) -> Potentials {
        let mut unary = Vec::with_capacity(self.num_vars());
        for v in 0..self.num_vars() {
            let mut t = Vec::new();
            self.reparam_unary_table(msgs, v, &mut t);
            unary.push(t);
        }
        let mut factors = Vec::with_capacity(self.num_factors());
        for e in 0..self.num_factors() {
            let mut t = Vec::new();
            self.reparam_factor_table(msgs, e, &mut t);
            factors.push(t);
        }
        Potentials { unary, factors }
    }

    /// A new model whose potentials are `θ^α`.
    pub fn materialize_reparam(&self, msgs: &MessageVector) -> Model {
        Model {
            graph: self.graph.clone(),
            theta: self.reparam_potentials(msgs),
        }
    }

    /// `θ̂`: unary tables copied, each factor augmented by `Σ_{v∈a} θ̃_v(x_v)`.
    pub fn hat_theta(&self, tilde: &TildeTheta) -> Result<Model> {
        tilde.check_shape(&self.graph)?;
        let mut factors = self.theta.factors.clone();
        for (e, t) in factors.iter_mut().enumerate() {
            add_unary_terms(&self.graph, e, t, |p, s| tilde.0[self.graph.edge(e)[p]][s]);
        }
        Ok(Model {
            graph: self.graph.clone(),
            theta: Potentials {
                unary: self.theta.unary.clone(),
                factors,
            },
        })
    }

    /// First `(edge, position, state)` violating
    /// `θ_v(x_v) > -inf ⇔ max_{x_{a∖v}} θ_a(x_a) > -inf`.
    fn compatibility_violation(&self) -> Option<(usize, usize, usize)> {
        let mut red = Vec::new();
        for (e, p) in self.graph.pairs() {
            let v = self.graph.edge(e)[p];
            marginal_reduce(
                &self.graph,
                Temperature::Infinite,
                e,
                p,
                &self.theta.factors[e],
                &mut red,
            );
            for (xv, (&u, &r)) in self.theta.unary[v].iter().zip(&red).enumerate() {
                if (u > f64::NEG_INFINITY) != (r > f64::NEG_INFINITY) {
                    return Some((e, p, xv));
                }
            }
        }
        None
    }
}

fn check_values(t: &[ExtReal]) -> std::result::Result<(), String> {
    if let Some(i) = t.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(format!("entry {i} is {} (only reals and -inf allowed)", t[i]));
    }
    if t.iter().all(|&x| x == f64::NEG_INFINITY) {
        return Err("every entry is -inf".into());
    }
    Ok(())
}

/// Adds `term(position, state)` for every position to each entry of a factor table.
#[inline]
pub(crate) fn add_unary_terms(
    graph: &Hypergraph,
    e: usize,
    table: &mut [f64],
    term: impl Fn(usize, usize) -> f64,
) {
    let vars = graph.edge(e);
    if vars.len() == 2 {
        let (d0, d1) = (graph.domain(vars[0]), graph.domain(vars[1]));
        for i in 0..d0 {
            let a = term(0, i);
            for j in 0..d1 {
                table[i * d1 + j] += a + term(1, j);
            }
        }
        return;
    }
    for (idx, t) in table.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in 0..vars.len() {
            s += term(p, graph.state_at(e, p, idx));
        }
        *t += s;
    }
}

/// `out[x_v] = ⊕_{x_{a∖v}} table(x_a)` for the variable at position `pos` of edge `e`.
pub(crate) fn marginal_reduce(
    graph: &Hypergraph,
    t: Temperature,
    e: usize,
    pos: usize,
    table: &[f64],
    out: &mut Vec<f64>,
) {
    let d = graph.domain(graph.edge(e)[pos]);
    let stride = graph.strides(e)[pos];
    let block = stride * d;
    let outer = table.len() / block;
    out.clear();
    for s in 0..d {
        let slice = (0..outer).flat_map(|o| {
            let base = o * block + s * stride;
            table[base..base + stride].iter().copied()
        });
        out.push(t.reduce(slice));
    }
}

/// Messages `α_{av}`: one finite table over `X_v` per pair `v ∈ a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageVector {
    data: Vec<f64>,
}

impl MessageVector {
    pub fn zeros(graph: &Hypergraph) -> Self {
        MessageVector {
            data: vec![0.0; *graph.pair_offsets.last().unwrap()],
        }
    }

    /// Builds messages from per-pair tables in canonical pair order.
    pub fn from_tables(graph: &Hypergraph, tables: &[Vec<f64>]) -> Result<Self> {
        if tables.len() != graph.num_pairs() {
            return Err(Error::Usage(format!(
                "expected {} message tables, got {}",
                graph.num_pairs(),
                tables.len()
            )));
        }
        let mut data = Vec::with_capacity(*graph.pair_offsets.last().unwrap());
        for ((e, p), t) in graph.pairs().zip(tables) {
            if t.len() != graph.domain(graph.edge(e)[p]) {
                return Err(Error::Usage(format!("message table for pair ({e},{p}) has wrong length")));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Usage("messages must be finite".into()));
            }
            data.extend_from_slice(t);
        }
        Ok(MessageVector { data })
    }

    /// Per-pair tables in canonical pair order.
    pub fn to_tables(&self, graph: &Hypergraph) -> Vec<Vec<f64>> {
        graph.pairs().map(|(e, p)| self.get(graph, e, p).to_vec()).collect()
    }

    #[inline]
    pub fn get(&self, graph: &Hypergraph, e: usize, pos: usize) -> &[f64] {
        let id = graph.pair_id(e, pos);
        &self.data[graph.pair_offsets[id]..graph.pair_offsets[id + 1]]
    }

    #[inline]
    pub fn get_mut(&mut self, graph: &Hypergraph, e: usize, pos: usize) -> &mut [f64] {
        let id = graph.pair_id(e, pos);
        &mut self.data[graph.pair_offsets[id]..graph.pair_offsets[id + 1]]
    }

    pub fn negated(&self) -> Self {
        MessageVector {
            data: self.data.iter().map(|x| -x).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Outer-loop variable log-distributions `θ̃_v`, ⊕-normalized per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeTheta(pub(crate) Vec<Vec<ExtReal>>);

impl TildeTheta {
    pub fn zeros(graph: &Hypergraph) -> Self {
        TildeTheta(graph.domains().iter().map(|&d| vec![0.0; d]).collect())
    }

    /// Normalizes each table so that `⊕_{x_v} θ̃_v(x_v) = 0` under `t`.
    pub fn normalized(t: Temperature, mut tables: Vec<Vec<ExtReal>>) -> Result<Self> {
        for (v, table) in tables.iter_mut().enumerate() {
            check_values(table).map_err(|m| Error::Usage(format!("tilde table {v}: {m}")))?;
            let z = t.reduce_slice(table);
            for x in table.iter_mut() {
                *x -= z;
            }
        }
        Ok(TildeTheta(tables))
    }

    /// Wraps tables without normalizing; only for shape-level operations like `hat_theta`.
    pub fn from_raw(tables: Vec<Vec<ExtReal>>) -> Self {
        TildeTheta(tables)
    }

    pub fn tables(&self) -> &[Vec<ExtReal>] {
        &self.0
    }

    pub fn table(&self, v: usize) -> &[ExtReal] {
        &self.0[v]
    }

    pub fn is_normalized(&self, t: Temperature, tol: f64) -> bool {
        self.0.iter().all(|tb| t.reduce_slice(tb).abs() <= tol)
    }

    fn check_shape(&self, graph: &Hypergraph) -> Result<()> {
        if self.0.len() != graph.num_vars()
            || self.0.iter().zip(graph.domains()).any(|(t, &d)| t.len() != d)
        {
            return Err(Error::Usage("tilde tables do not match the model's domains".into()));
        }
        Ok(())
    }
}
