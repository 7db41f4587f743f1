use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("algebra is not split solvable: {0}")]
    NotSplitSolvable(String),

    #[error("root pattern violation: {0}")]
    RootPatternViolation(String),

    #[error("dual basis of the abelian part is singular")]
    DegenerateDual,

    #[error("j-algebra validation failed: {0}")]
    InvalidJAlgebra(String),

    #[error("no orientation makes Phi positive: {0}")]
    PositivityUnfixable(String),

    #[error("solver diverged (outside or numerically undecidable), residual {residual:e}")]
    SolverDiverged { residual: f64 },

    #[error("point is not in the domain (residual {residual:e})")]
    NotInDomain { residual: f64 },

    #[error("projected point left the quotient domain (residual {residual:e})")]
    ImageOutsideDomain { residual: f64 },

    #[error("matrix is not invertible (|det| = {det:e})")]
    NotInvertible { det: f64 },

    #[error("eigenvalue clusters are ambiguous at gap {gap:e}")]
    ClusterAmbiguous { gap: f64 },

    #[error("ideal is not a Heisenberg extension: {0}")]
    HeisenbergCheckFailed(String),

    #[error("element is not in the nilradical (delta component {0:e})")]
    NotInNilradical(f64),

    #[error("element has zero semisimple part")]
    ZeroSemisimplePart,

    #[error("subspace has dimension {got}, expected {expected}")]
    WrongSubspaceDimension { expected: usize, got: usize },

    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),

    #[error("automorphism cannot be conjugated into the split solvable group: {0}")]
    UnsupportedConjugation(String),

    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
