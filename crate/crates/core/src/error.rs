use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },

    #[error("unstable Hamiltonian: coupled quadratic form has smallest eigenvalue {min_eigenvalue:e}")]
    UnstableHamiltonian { min_eigenvalue: f64 },

    #[error("system too large for exact diagonalization: {spins} spins (limit {limit})")]
    TooLarge { spins: usize, limit: usize },

    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: &'static str, detail: String },

    #[error("bond dimension overflow at bond {bond}: {needed} singular values above cutoff, chi_max = {chi_max}")]
    BondOverflow { bond: usize, needed: usize, chi_max: usize },

    #[error("gapless chain (onsite frequency {0}) has no normalizable ground state")]
    GaplessChain(f64),

    #[error("frequency {omega} sits on a band edge ({edge}); the resonance coefficients diverge there (van Hove point)")]
    VanHove { omega: f64, edge: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("record grids differ: {0}")]
    GridMismatch(String),

    #[error("trace too short for a fit: {0}")]
    TraceTooShort(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("no regime change in the swept range [{low}, {high}]")]
    NoRegimeChange { low: f64, high: f64 },

    #[error("malformed trace file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
