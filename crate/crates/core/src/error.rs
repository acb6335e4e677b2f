use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid parameters or incompatible inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain of the requested function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("alpha = {alpha} lies outside the (1/2, 1) window required for the convergence theory; pass the out-of-theory override to run anyway")]
    OutOfTheory { alpha: f64 },

    #[error("subordinator grid would exceed {cap} entries before passing the horizon")]
    GridTooLarge { cap: usize },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    /// Solver failure tagged with the Monte Carlo realization that produced it.
    #[error("realization {realization}: {source}")]
    Realization {
        realization: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate coupling: mean error at dt = {dt} is exactly zero; coarse and reference solutions coincide")]
    DegenerateCoupling { dt: f64 },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::DegenerateCoupling { .. }
            | Error::GridTooLarge { .. } => true,
            Error::Realization { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
