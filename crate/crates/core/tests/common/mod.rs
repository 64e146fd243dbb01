//! Instance builders and independent reference computations for integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use bethe_core::{Factor, Hypergraph, MessageVector, Model};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random pairwise model over `n` variables with domains in `1..=k`, plus a
/// ternary factor on the first three variables. With `dead`, about one state
/// in five is removed (its unary entry and every factor entry touching it
/// become `-inf`), keeping at least one live state per variable.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, dead: bool) -> Model {
    let domains: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
    let alive: Vec<Vec<bool>> = domains
        .iter()
        .map(|&d| {
            let keep = rng.random_range(0..d);
            (0..d).map(|s| s == keep || !dead || rng.random_bool(0.8)).collect()
        })
        .collect();
    let mut r = || rng.random_range(-2.0..2.0);
    let unary = (0..n)
        .map(|v| (0..domains[v]).map(|s| if alive[v][s] { r() } else { f64::NEG_INFINITY }).collect())
        .collect();
    let mut scopes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r() > 0.0 {
                scopes.push(vec![i, j]);
            }
        }
    }
    if n >= 3 {
        scopes.push(vec![0, 1, 2]);
    }
    let factors = scopes
        .into_iter()
        .map(|vars| {
            let len: usize = vars.iter().map(|&v| domains[v]).product();
            let table = (0..len)
                .map(|mut idx| {
                    let mut live = true;
                    for &v in vars.iter().rev() {
                        live &= alive[v][idx % domains[v]];
                        idx /= domains[v];
                    }
                    if live {
                        r()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            Factor { vars, table }
        })
        .collect();
    Model::new(domains, unary, factors).expect("construction respects compatibility")
}

pub fn random_messages(rng: &mut ChaCha8Rng, g: &Hypergraph, scale: f64) -> MessageVector {
    let tables: Vec<Vec<f64>> = g
        .pairs()
        .map(|(e, p)| (0..g.domain(g.edge(e)[p])).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    MessageVector::from_tables(g, &tables).unwrap()
}

/// Exact maximum energy of a `rows × cols` grid model by dynamic programming
/// over whole rows (`K^cols` states per row).
pub fn grid_max_energy(m: &Model, rows: usize, cols: usize) -> f64 {
    let k = m.graph().domain(0);
    let g = m.graph();
    let states = k.pow(cols as u32);
    let row_of = |mut s: usize| -> Vec<usize> {
        let mut x = vec![0; cols];
        for c in (0..cols).rev() {
            x[c] = s % k;
            s /= k;
        }
        x
    };
    let pair = |a: usize, b: usize, xa: usize, xb: usize| -> f64 {
        let e = g.find_edge(&[a, b]).expect("grid edge");
        m.factor(e)[xa * k + xb]
    };
    let within = |r: usize, x: &[usize]| -> f64 {
        let mut s = 0.0;
        for c in 0..cols {
            let v = r * cols + c;
            s += m.unary(v)[x[c]];
            if c + 1 < cols {
                s += pair(v, v + 1, x[c], x[c + 1]);
            }
        }
        s
    };
    let rows_x: Vec<Vec<usize>> = (0..states).map(row_of).collect();
    let mut best: Vec<f64> = rows_x.iter().map(|x| within(0, x)).collect();
    for r in 1..rows {
        let next: Vec<f64> = rows_x
            .iter()
            .map(|x| {
                let own = within(r, x);
                rows_x
                    .iter()
                    .zip(&best)
                    .map(|(y, &b)| {
                        let vert: f64 = (0..cols)
                            .map(|c| pair((r - 1) * cols + c, r * cols + c, y[c], x[c]))
                            .sum();
                        b + vert
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
                    + own
            })
            .collect();
        best = next;
    }
    best.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Directory for counterexample dumps, inside cargo's scratch area.
pub fn artifact_dir(sub: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(sub);
    std::fs::create_dir_all(&d).unwrap();
    d
}
