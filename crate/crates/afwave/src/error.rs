use thiserror::Error;

/// Library-wide error type. Variants are grouped by how a caller should react:
/// `Config`/`Resolution`/`Shape`/`Precondition` mean the request was malformed
/// (fix the inputs), the rest mean the computation itself could not certify its
/// postconditions.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad profile parameters, malformed
    /// schema, ill-ordered ranges, violated side conditions).
    #[error("configuration error: {0}")]
    Config(String),

    /// The grid cannot represent the requested computation (too coarse for a
    /// feature width or an oscillation, too few annuli).
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Mismatched dimensions between a grid and field samples.
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A stated precondition of an operation was violated by the inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Floating-point breakdown (NaN/Inf) or an external solver failure.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A quadrature contour passes too close to the spectrum.
    #[error("contour error: {msg} (nearest eigenvalue {nearest})")]
    Contour { msg: String, nearest: num_complex::Complex64 },

    /// No exponential separation between the fitted rates of a flow.
    #[error("no exponential dichotomy: fitted decay rate {gamma:.3e} does not dominate center rate {gamma0:.3e}")]
    NoDichotomy { gamma: f64, gamma0: f64 },

    /// The perturbation is too large for the fixed-point contraction.
    #[error("perturbation too large: contraction factor {factor:.3e} >= 1/2 (epsilon = {epsilon:.3e})")]
    EpsilonTooLarge { factor: f64, epsilon: f64 },

    /// The truncation horizon is too short for the requested tolerance.
    #[error("horizon too short: geometric tail bound {tail:.3e} exceeds tolerance {tol:.3e}")]
    HorizonTooShort { tail: f64, tol: f64 },

    /// A constructed object failed one of its own invariants.
    #[error("construction error: {0}")]
    Construction(String),
}

impl Error {
    /// True when the error stems from caller-supplied configuration rather
    /// than a numerical failure; the CLI maps this to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Resolution(_)
                | Error::Shape { .. }
                | Error::Precondition(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
