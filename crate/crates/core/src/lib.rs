pub mod cli;
pub mod error;
pub mod evolution;
pub mod fock;
pub mod hamiltonian;
pub mod models;
pub mod oracle;
pub mod residuals;
pub mod solver;

pub use error::{CqeError, Result};
