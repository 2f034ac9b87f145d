//! Tuning discrete random generators by gradient ascent on exactly
//! computed probabilities.
//!
//! Generators are written in a small functional language with weighted
//! choice ([`surface`]). They are lowered to a core language of Boolean
//! flips ([`ir`]), compiled to binary decision diagrams ([`bdd`],
//! [`compile`]), and their output distributions and its derivatives with
//! respect to the symbolic weights are computed by weighted model counting
//! ([`inference`]). [`objectives`] and [`trainer`] turn those derivatives
//! into weight updates.

pub mod bdd;
pub mod compile;
pub mod corpus;
pub mod derive;
pub mod error;
pub mod inference;
pub mod ir;
pub mod objectives;
pub mod sampler;
pub mod surface;
pub mod trainer;
pub mod weights;
pub mod workloads;

pub use error::{Error, Result};
