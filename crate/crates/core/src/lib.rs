//! Discrete graphical-model inference in the log-sum-exp and max-sum semirings.
//!
//! The crate centres on two message-passing algorithms that work at any
//! inverse temperature `β ∈ (0, ∞]`:
//!
//! * [`diffusion`]: coordinate descent on the reparameterization dual of a
//!   convex free energy. At `β = ∞` this is max-sum diffusion, which solves
//!   the dual of the LP relaxation of MAP inference.
//! * [`double_loop`]: a minorize-maximize scheme on the Bethe free energy
//!   whose inner loop is diffusion. It converges to a (max-sum) belief
//!   propagation fixed point.
//!
//! [`oracle`] provides exact answers by enumeration, [`csp_decode`] recovers
//! assignments from active (maximal) table entries, and [`generators`]
//! produces reproducible benchmark instances.

pub mod cli;
pub mod csp_decode;
pub mod diffusion;
pub mod double_loop;
pub mod error;
pub mod generators;
pub mod model;
pub mod oracle;
pub mod semiring;

pub use error::{Error, Result};
pub use model::{Assignment, Factor, Hypergraph, MessageVector, Model, Potentials, TildeTheta};
pub use oracle::{BeliefScale, BeliefVector, Oracle};
pub use semiring::{combine, combine_reduce, ExtReal, Temperature};
