//! Error types shared across the filtering kernels and the tape.

use thiserror::Error;

/// Errors raised by the filtering kernels and signal operators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    /// Input lengths or trajectory shapes disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An invalid argument (empty input, zero order, bad hop, ...).
    #[error("invalid argument: {0}")]
    BadArgument(String),

    /// The recursion produced a non-finite sample; reports the first bad index.
    #[error("non-finite output at sample {index}: coefficient trajectory is unstable over this input")]
    NonFiniteOutput { index: usize },

    /// A frame's frequency response is singular (denominator root on the unit circle).
    #[error("singular frame response: |A| < {min_abs:e} at frame {frame}, bin {bin}")]
    SingularFrame { frame: usize, bin: usize, min_abs: f64 },

    /// A per-sample normalisation factor vanished.
    #[error("singular normalisation at sample {index}: |{name}| = {value:e} < 1e-9")]
    SingularNormalisation { index: usize, name: &'static str, value: f64 },

    /// Brute-force path enumeration would exceed the budget.
    #[error("enumeration budget exceeded: lag {lag} with order {order} enumerates > {budget} paths")]
    EnumerationBudget { lag: usize, order: usize, budget: u64 },
}

/// Errors raised while building or differentiating a tape graph.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    /// Operand shapes are incompatible for the requested node.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An invalid argument (unknown node id, non-scalar root, ...).
    #[error("invalid argument: {0}")]
    BadArgument(String),

    /// A wrapped kernel failed during forward or backward evaluation.
    #[error("kernel error inside node: {0}")]
    Kernel(#[from] FilterError),
}

/// Errors raised by the optimisers; a failed step leaves the parameters
/// untouched.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    /// A gradient entry is NaN or infinite; the step is rejected.
    #[error("non-finite gradient at parameter {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },

    /// Parameter and gradient vectors disagree in length.
    #[error("parameter/gradient length mismatch: {params} vs {grads}")]
    LengthMismatch { params: usize, grads: usize },
}

/// Errors raised by the experiment harness (fits, benchmarks, artifact I/O).
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Wav(#[from] crate::wav::WavError),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    /// The training loss left the finite range; the run is aborted and the
    /// last parameter state is dumped alongside the report.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Filter(#[from] FilterError),

    #[error(transparent)]
    Tape(#[from] TapeError),

    #[error(transparent)]
    Optim(#[from] OptimError),
}
