use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("all weights are zero")]
    AllZeroMass,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension {n} exceeds the limit {max}")]
    DimensionTooLarge { n: usize, max: usize },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("pinning selects a subcube of zero mass")]
    ZeroMassSubcube,
    #[error("pinning contradicts an existing pin at coordinate {0}")]
    IncompatiblePin(usize),
    #[error("coordinate {0} is free but deterministic")]
    DegenerateCoordinate(usize),
    #[error("first measure is not absolutely continuous w.r.t. the second")]
    NotAbsolutelyContinuous,
    #[error("negative input {0}")]
    NegativeInput(f64),
    #[error("target is outside the convex hull of the support")]
    OutsideHull,
    #[error("iteration cap {0} reached")]
    MaxIterations(usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("maximum degree {0} is below 3")]
    DegreeTooSmall(usize),
    #[error("pinning fixes a neighbour of vertex {0}")]
    InvalidPinning(usize),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("coupling ({0}, {1}) is negative")]
    NotFerromagnetic(usize, usize),
    #[error("subset size {l} exceeds free coordinates {f}")]
    SubsetTooLarge { l: usize, f: usize },
    #[error("configuration {0} has zero stationary mass")]
    ZeroStationaryRow(usize),
    #[error("standard error {achieved} above requested {requested}")]
    InsufficientSamples { achieved: f64, requested: f64 },
    #[error("detailed balance violated by {0}")]
    NotReversible(f64),
    #[error("entropy vanishes identically")]
    DegenerateEntropy,
    #[error("total variation still above target after {0} steps")]
    Nonconvergence(usize),
    #[error("no free coordinates left")]
    NoFreeCoordinates,
    #[error("clipping removed {0} of the mass in one step")]
    StepTooLarge(f64),
    #[error("enumeration of {needed} items exceeds budget {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("argument outside [-1, 1]: {0}")]
    DomainError(f64),
    #[error("final scheme must be a Doob scheme")]
    NotDoobFinalScheme,
    #[error("instance is not in the uniqueness regime")]
    NotUnique,
    #[error("potential fails the curvature check at grid point {0}")]
    NotStronglyConvex(usize),
    #[error("truncated tail mass {0} too large")]
    TailMass(f64),
    #[error("quadrature residual {0} too large")]
    QuadratureFailure(f64),
    #[error("zero denominator at state {0}")]
    ZeroDenominator(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
