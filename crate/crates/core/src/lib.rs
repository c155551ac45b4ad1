#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Information-theoretic model of grammatical value systems.
//!
//! Encoders from semantic attributes to grammatical values are optimized
//! under a per-referent memory/surprisal tradeoff, a lexicon-level
//! size/consistency cost and a discriminability objective; the same
//! entropy and divergence primitives drive a CONLL-U corpus analysis with
//! a Dirichlet random-language significance test.

pub mod baseline;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod information;
pub mod instance_opt;
pub mod optim;
pub mod sweep;
pub mod system_opt;
pub mod theorems;

pub use error::{Error, Result};
