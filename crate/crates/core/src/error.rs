use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid code distance {0}: must be odd and at least 3")]
    InvalidDistance(usize),
    #[error("qubit count must be at least 1")]
    EmptyRegister,
    #[error("qubit {qubit} out of range for a register of {n} qubits")]
    QubitOutOfRange { qubit: usize, n: usize },
    #[error("two-qubit gate targets must be distinct (got {0} twice)")]
    DuplicateTarget(usize),
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("truncated stream while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("fault at op {op} produced {clicks} detector clicks; the circuit is not graphlike")]
    NonGraphlikeFault { op: usize, clicks: usize },
    #[error("inconsistent observable effect for detector pair {0}")]
    InconsistentEdge(String),
    #[error("unknown data qubit {0}")]
    UnknownQubit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}
