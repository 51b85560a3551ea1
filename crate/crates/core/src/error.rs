use thiserror::Error;

/// Errors raised by the numeric core, the protocol simulator and the attack engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("loss node must be scalar, found shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("unsupported activation for closed-form embedding gradient: {0}")]
    UnsupportedActivation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("attack aborted at iteration {iteration}: non-finite loss (gradient {gradient}, accuracy {accuracy}, knowledge {knowledge}, triplet {triplet})")]
    AttackDiverged {
        iteration: usize,
        gradient: f64,
        accuracy: f64,
        knowledge: f64,
        triplet: f64,
    },

    #[error("known sample {0} never appears in the gradient log")]
    KnownSampleMissing(usize),

    #[error("metric input invalid: {0}")]
    Metric(String),

    #[error("dataset error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
