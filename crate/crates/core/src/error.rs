use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An integral against the Lévy measure failed the dyadic-shell ratio test.
    #[error("divergent integral ({context}): shell contributions stopped decaying near |x| = {scale:e}")]
    Divergence { context: String, scale: f64 },

    #[error("unsupported representation: {0}")]
    Unsupported(String),

    #[error("degenerate basis: {0}")]
    Degenerate(String),

    #[error("time step {dt:e} violates the explicit jump-term bound; use dt <= {max_dt:e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("rank-deficient regression at step {step}: {kept} of {requested} basis functions independent; use fewer basis functions")]
    RankDeficient { step: usize, kept: usize, requested: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
