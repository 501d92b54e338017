//! Surface-code memory experiments with qubit loss, and decoders that
//! identify lost qubits while correcting logical errors.

pub mod bits;
pub mod circuit;
pub mod cli;
pub mod decoders;
pub mod error;
pub mod experiment;
pub mod flicker;
pub mod lattice;
pub mod matching;
pub mod metrics;
pub mod stab_sim;
pub mod stgnn;

pub use error::{Error, Result};
