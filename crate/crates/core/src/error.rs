use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("truncation exceeded: {what} needs degree {needed}, cap is {cap}")]
    TruncationExceeded {
        what: &'static str,
        needed: usize,
        cap: usize,
    },
    #[error("grid too coarse: {points} points cannot resolve {modes} modes")]
    GridTooCoarse { points: usize, modes: usize },
    #[error("loop vanishes on the circle (min modulus {min_modulus:e})")]
    VanishingLoop { min_modulus: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("structure is not almost complex: |J^2 + I| = {defect:e}")]
    NotAlmostComplex { defect: f64 },
    #[error("structure is not normalised at the origin: |J(0) - J0| = {defect:e}")]
    NotNormalised { defect: f64 },
    #[error("map does not preserve the unit sphere (defect {defect:e})")]
    NotBallPreserving { defect: f64 },
    #[error("degenerate defining functions: gradient rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("ambiguous numerical rank: singular value gap ratio {ratio:e} below {required:e}")]
    AmbiguousRank { ratio: f64, required: f64 },
    #[error("inconsistent index profile: {0}")]
    InconsistentIndices(String),
    #[error("no convergence in {stage} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("fixed-point map is not contracting (ratio {ratio:.3})")]
    NotContracting { ratio: f64 },
    #[error("continuation stalled at lambda = {lambda} with step {step:e}")]
    ContinuationStalled { lambda: f64, step: f64 },
    #[error("normalisation constraints are not transverse (min singular value {sigma:e})")]
    NotTransverse { sigma: f64 },
    #[error("solve failed for direction {direction}: {source}")]
    Direction { direction: String, source: Box<Error> },
    #[error("indicatrix fit residual {residual:.3e} exceeds {tolerance:.1e}")]
    FitResidual { residual: f64, tolerance: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
