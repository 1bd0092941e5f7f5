use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite adjoint produced by `{op}` (tape node {node})")]
    NonFiniteAdjoint { node: usize, op: &'static str },

    #[error("lift matrix is rank deficient (Cholesky pivot {pivot:e})")]
    RankDeficient { pivot: f64 },

    #[error("coupling layer {layer} produced a non-finite value")]
    LayerOverflow { layer: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("maximum step count exceeded at t = {t}")]
    MaxSteps { t: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("airspeed {airspeed} m/s is below the stall guard")]
    StallGuard { airspeed: f64 },

    #[error("singular linear system (pivot {pivot:e})")]
    Singular { pivot: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("output grids differ: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
