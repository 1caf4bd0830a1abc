//! Gradual domain adaptation on attributed graphs.

pub mod barycenter;
pub mod bundle;
pub mod error;
pub mod fgw;
pub mod generation;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod ot;
pub mod par;
pub mod partition;
pub mod progression;
pub mod synth;

pub use error::{Error, Result};
