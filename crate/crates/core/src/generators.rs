//! Seeded pairwise benchmark instances.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)` (crate
//! `rand_chacha`), drawn as `rand`'s standard `f64` in `[0, 1)` and mapped
//! affinely where needed. Draws happen in a fixed order: all unary tables
//! in variable order, then one block per factor in canonical hyperedge order.
//! `random_tree` topologies consume a separate stream seeded with
//! `seed ^ TREE_STREAM` so the potentials stream is the same as for other
//! topologies of equal size.
//!
//! Pairwise interactions for an edge with weight `w ~ U[0, 1)`:
//!
//! | interaction          | `θ_a(x, y)`                                    |
//! |----------------------|------------------------------------------------|
//! | `random`             | i.i.d. `U[-1, 1) · s` per entry                |
//! | `attractive`         | `s · w · [x = y]`                              |
//! | `repulsive`          | `-s · w · [x = y]`                             |
//! | `mixed`              | `±s · w · [x = y]`, sign drawn first per edge  |
//! | `circular_distance`  | `-s · w · min(|x-y|, K-|x-y|)`                 |
//! | `supermodular_ising` | `s · w · [x = y]`, `K = 2` only                |
//!
//! Unary entries are i.i.d. `U[-1, 1) · unary_scale`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Factor, Model};

const TREE_STREAM: u64 = 0x7472_6565_7472_6565;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Grid { rows: usize, cols: usize },
    Complete(usize),
    Chain(usize),
    RandomTree(usize),
}

impl Topology {
    pub fn num_vars(&self) -> usize {
        match *self {
            Topology::Grid { rows, cols } => rows * cols,
            Topology::Complete(n) | Topology::Chain(n) | Topology::RandomTree(n) => n,
        }
    }

    /// Edges as sorted pairs, in lexicographic order.
    pub fn edges(&self, seed: u64) -> Vec<Vec<usize>> {
        let mut edges = match *self {
            Topology::Grid { rows, cols } => {
                let mut out = Vec::new();
                for r in 0..rows {
                    for c in 0..cols {
                        let v = r * cols + c;
                        if c + 1 < cols {
                            out.push(vec![v, v + 1]);
                        }
                        if r + 1 < rows {
                            out.push(vec![v, v + cols]);
                        }
                    }
                }
                out
            }
            Topology::Complete(n) => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| vec![i, j]))
                .collect(),
            Topology::Chain(n) => (1..n).map(|i| vec![i - 1, i]).collect(),
            Topology::RandomTree(n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TREE_STREAM);
                (1..n).map(|i| vec![rng.random_range(0..i), i]).collect()
            }
        };
        edges.sort();
        edges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Random,
    Attractive,
    Repulsive,
    Mixed,
    CircularDistance,
    SupermodularIsing,
}

impl Interaction {
    pub const ALL: [Interaction; 6] = [
        Interaction::Random,
        Interaction::Attractive,
        Interaction::Repulsive,
        Interaction::Mixed,
        Interaction::CircularDistance,
        Interaction::SupermodularIsing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Interaction::Random => "random",
            Interaction::Attractive => "attractive",
            Interaction::Repulsive => "repulsive",
            Interaction::Mixed => "mixed",
            Interaction::CircularDistance => "circular_distance",
            Interaction::SupermodularIsing => "supermodular_ising",
        }
    }
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Interaction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Interaction::ALL
            .into_iter()
            .find(|i| i.name() == norm)
            .ok_or_else(|| Error::Usage(format!("unknown interaction {s:?}")))
    }
}

/// Everything needed to regenerate an instance bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub topology: Topology,
    pub labels: usize,
    pub interaction: Interaction,
    pub unary_scale: f64,
    pub pairwise_scale: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(topology: Topology, labels: usize, interaction: Interaction, seed: u64) -> Self {
        InstanceSpec {
            topology,
            labels,
            interaction,
            unary_scale: 1.0,
            pairwise_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.topology.num_vars() == 0 {
            return bad("topology must have at least one variable".into());
        }
        if self.labels < 2 {
            return bad(format!("labels must be >= 2, got {}", self.labels));
        }
        if self.interaction == Interaction::SupermodularIsing && self.labels != 2 {
            return bad("supermodular_ising requires exactly 2 labels".into());
        }
        for (name, s) in [("unary_scale", self.unary_scale), ("pairwise_scale", self.pairwise_scale)] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {s}"));
            }
        }
        Ok(())
    }
}

/// Builds the instance described by `spec`.
pub fn generate(spec: &InstanceSpec) -> Result<Model> {
    spec.validate()?;
    let n = spec.topology.num_vars();
    let k = spec.labels;
    let s = spec.pairwise_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sym = |rng: &mut ChaCha8Rng| 2.0 * rng.random::<f64>() - 1.0;
    let unary: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| sym(&mut rng) * spec.unary_scale).collect())
        .collect();
    let diag = |scale: f64| -> Vec<f64> {
        (0..k * k)
            .map(|i| if i / k == i % k { scale } else { 0.0 })
            .collect()
    };
    let factors = spec
        .topology
        .edges(spec.seed)
        .into_iter()
        .map(|vars| {
            let table = match spec.interaction {
                Interaction::Random => (0..k * k).map(|_| sym(&mut rng) * s).collect(),
                Interaction::Attractive | Interaction::SupermodularIsing => {
                    diag(s * rng.random::<f64>())
                }
                Interaction::Repulsive => diag(-s * rng.random::<f64>()),
                Interaction::Mixed => {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    diag(sign * s * rng.random::<f64>())
                }
                Interaction::CircularDistance => {
                    let w = rng.random::<f64>();
                    (0..k * k)
                        .map(|i| {
                            let d = (i / k).abs_diff(i % k);
                            -s * w * d.min(k - d) as f64
                        })
                        .collect()
                }
            };
            Factor { vars, table }
        })
        .collect();
    Model::new(vec![k; n], unary, factors)
}

/// Whether every binary pairwise table satisfies
/// `θ(0,0) + θ(1,1) >= θ(0,1) + θ(1,0)`. Tables of other shapes are ignored.
pub fn is_supermodular(m: &Model) -> bool {
    (0..m.num_factors()).all(|e| {
        let t = m.factor(e);
        t.len() != 4 || t[0] + t[3] >= t[1] + t[2]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: Topology, k: usize, i: Interaction) -> InstanceSpec {
        InstanceSpec::new(t, k, i, 42)
    }

    #[test]
    fn topology_counts() {
        let g = generate(&spec(Topology::Grid { rows: 2, cols: 2 }, 2, Interaction::Random)).unwrap();
        assert_eq!(g.num_vars(), 4);
        assert_eq!(g.num_factors(), 4);
        let c = generate(&spec(Topology::Complete(5), 3, Interaction::Mixed)).unwrap();
        assert_eq!(c.num_factors(), 10);
        let ch = generate(&spec(Topology::Chain(6), 3, Interaction::Attractive)).unwrap();
        assert_eq!(ch.num_factors(), 5);
        let t = generate(&spec(Topology::RandomTree(9), 3, Interaction::Repulsive)).unwrap();
        assert_eq!(t.num_factors(), 8);
        let g = generate(&spec(Topology::Grid { rows: 3, cols: 4 }, 2, Interaction::Random)).unwrap();
        assert_eq!(g.num_factors(), 3 * 3 + 2 * 4);
    }

    #[test]
    fn random_tree_is_connected_and_acyclic() {
        for seed in 0..20 {
            let edges = Topology::RandomTree(12).edges(seed);
            assert_eq!(edges.len(), 11);
            // union-find: n-1 edges without a cycle span the tree
            let mut parent: Vec<usize> = (0..12).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                if p[x] != x {
                    let r = find(p, p[x]);
                    p[x] = r;
                }
                p[x]
            }
            for e in &edges {
                let (a, b) = (find(&mut parent, e[0]), find(&mut parent, e[1]));
                assert_ne!(a, b);
                parent[a] = b;
            }
        }
    }

    #[test]
    fn deterministic() {
        for i in Interaction::ALL {
            let k = if i == Interaction::SupermodularIsing { 2 } else { 3 };
            let s = spec(Topology::Grid { rows: 3, cols: 3 }, k, i);
            let a = generate(&s).unwrap().to_json_string();
            let b = generate(&s).unwrap().to_json_string();
            assert_eq!(a, b);
            let mut other = s;
            other.seed += 1;
            assert_ne!(a, generate(&other).unwrap().to_json_string());
        }
    }

    #[test]
    fn supermodular_families() {
        for seed in 0..10 {
            for i in [Interaction::Attractive, Interaction::SupermodularIsing] {
                let mut s = spec(Topology::Grid { rows: 4, cols: 4 }, 2, i);
                s.seed = seed;
                assert!(is_supermodular(&generate(&s).unwrap()));
            }
        }
        let mut s = spec(Topology::Complete(6), 2, Interaction::Repulsive);
        s.pairwise_scale = 2.0;
        assert!(!is_supermodular(&generate(&s).unwrap()));
    }

    #[test]
    fn interaction_shapes() {
        let m = generate(&spec(Topology::Chain(2), 4, Interaction::CircularDistance)).unwrap();
        let t = m.factor(0);
        let w = -t[1];
        assert!(w > 0.0);
        // distances from label 0: 0, 1, 2, 1
        for (j, d) in [0.0, 1.0, 2.0, 1.0].iter().enumerate() {
            assert!((t[j] + w * d).abs() < 1e-15);
        }
        let m = generate(&spec(Topology::Chain(2), 3, Interaction::Repulsive)).unwrap();
        let t = m.factor(0);
        assert!(t[0] < 0.0 && t[0] == t[4] && t[4] == t[8] && t[1] == 0.0);
        for v in 0..m.num_vars() {
            assert!(m.unary(v).iter().all(|x| (-1.0..1.0).contains(x)));
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&spec(Topology::Chain(3), 1, Interaction::Random)).is_err());
        assert!(generate(&spec(Topology::Chain(0), 2, Interaction::Random)).is_err());
        assert!(generate(&spec(Topology::Chain(3), 3, Interaction::SupermodularIsing)).is_err());
        let mut s = spec(Topology::Chain(3), 2, Interaction::Random);
        s.unary_scale = -1.0;
        assert!(generate(&s).is_err());
        assert_eq!("circular-distance".parse::<Interaction>().unwrap(), Interaction::CircularDistance);
        assert!("nope".parse::<Interaction>().is_err());
    }
}
