use thiserror::Error;

#[derive(Debug, Error)]
pub enum PspoError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "infinite KL divergence: reference has zero mass where policy is positive (state {state}, action {action})"
    )]
    InfiniteKl { state: usize, action: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("posterior normalization failed: every weight underflowed to zero")]
    PosteriorUnderflow,

    #[error("grid search over {0} models is not supported (at most 4)")]
    TooManyModels(usize),

    #[error("operation not supported for {0} models")]
    Unsupported(&'static str),

    #[error("dynamics training diverged at epoch {epoch}: negative log-likelihood is not finite")]
    Diverged { epoch: usize },

    #[error("trust-region bisection failed after {iterations} iterations: bracket [{lo}, {hi}], kl(lo) = {kl_lo}, target {target}")]
    BisectionFailed { iterations: usize, lo: f64, hi: f64, kl_lo: f64, target: f64 },

    #[error("environment step after episode end")]
    StepAfterDone,

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("degenerate reference scores for `{0}`: expert equals random")]
    DegenerateReference(String),

    #[error("linear system is singular")]
    Singular,

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<PspoError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PspoError {
    pub fn at_iteration(self, iteration: usize) -> Self {
        PspoError::AtIteration { iteration, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, PspoError>;
