use thiserror::Error;

#[derive(Debug, Error)]
pub enum CqeError {
    #[error("empty sector: no determinant with {n_electrons} electrons and 2Sz={sz_twice} in {n_spin_orbitals} spin orbitals")]
    EmptySector {
        n_spin_orbitals: usize,
        n_electrons: usize,
        sz_twice: i32,
    },

    #[error("invalid sector: {0}")]
    InvalidSector(String),

    #[error("orbital index {index} out of range for {n_spin_orbitals} spin orbitals")]
    OrbitalOutOfRange { index: usize, n_spin_orbitals: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("basis mismatch between operands")]
    BasisMismatch,

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("operation requires an undilated state (n_ancilla = {0})")]
    DilatedState(u8),

    #[error("operator is not Hermitian (max defect {0:.3e})")]
    NotHermitian(f64),

    #[error("exponential action did not converge (estimated error {0:.3e})")]
    ExpmNonConvergence(f64),

    #[error("line {line}: {msg}")]
    Fcidump { line: usize, msg: String },

    #[error("need at least two electrons, got {0}")]
    TooFewElectrons(usize),

    #[error("dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("sampled estimation requires an explicit seed")]
    MissingSeed,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state is not supported on the pairing subspace (leakage {0:.3e})")]
    OffSphere(f64),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CqeError>;
