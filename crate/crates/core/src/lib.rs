//! Simple hybrid Hamiltonian systems with translation symmetries.
//!
//! The crate covers the whole pipeline from textual system descriptions to
//! a certified reduction:
//!
//! - [`expr`]: expression parsing and forward-mode differentiation;
//! - [`phase`]: Darboux phase space, Hamiltonian vector fields, integrators;
//! - [`hybrid`]: guard detection, impacts and hybrid flows;
//! - [`symmetry`]: translation actions, momentum maps, cocycles, isotropy;
//! - [`reduction`]: level-set charts, reduced systems and flow comparison.

pub mod error;
pub mod expr;
pub mod hybrid;
pub mod phase;
pub mod reduction;
pub mod symmetry;

pub use error::{Error, Result};
