use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization or optimizer failed on otherwise valid inputs.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The DDE integrator produced a non-finite state.
    #[error("integration blew up at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    /// Marginal-likelihood search never improved on its starting points.
    #[error("hyperparameter search failed to improve (best log-likelihood {best_value}); best log-params {best_log_params:?}")]
    FitStalled { best_log_params: Vec<f64>, best_value: f64 },

    /// Error raised inside a named pipeline stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
