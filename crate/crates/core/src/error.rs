use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {id:?}: line {first_line} and line {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("invalid record: {0}")]
    Invalid(String),

    #[error("company {company}: ground-truth technology {tech:?} is not in the lexicon")]
    UnresolvedGroundTruth { company: String, tech: String },

    #[error("requested {requested} few-shot examples but only {available} are available")]
    NotEnoughExamples { requested: usize, available: usize },

    #[error("gateway configuration error: {0}")]
    GatewayConfig(String),

    #[error("gateway gave up after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },

    #[error("missing template {step:?} in template set {set:?}")]
    MissingTemplate { set: String, step: String },

    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),

    #[error("unparseable model output ({what}): {raw:?}")]
    Unparseable { what: &'static str, raw: String },

    #[error("company {company}, step {step}: {source}")]
    Step {
        company: String,
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("strategy {strategy}: {source}")]
    Strategy {
        strategy: String,
        #[source]
        source: Box<Error>,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("embedding provider failure: {0}")]
    Provider(String),

    #[error("nothing to rank: {0}")]
    EmptyPool(String),

    #[error("all queries were excluded from evaluation")]
    AllExcluded,

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown query id {id:?}; nearest known ids: {suggestions:?}")]
    UnknownQuery { id: String, suggestions: Vec<String> },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn at_step(self, company: &str, step: &str) -> Self {
        Error::Step {
            company: company.to_string(),
            step: step.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_strategy(self, strategy: &str) -> Self {
        Error::Strategy {
            strategy: strategy.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad inputs or configuration rather than
    /// by something going wrong while running.
    pub fn is_validation(&self) -> bool {
        if let Error::Step { source, .. } | Error::Strategy { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateId { .. }
                | Error::Invalid(_)
                | Error::UnresolvedGroundTruth { .. }
                | Error::NotEnoughExamples { .. }
                | Error::GatewayConfig(_)
                | Error::MissingTemplate { .. }
                | Error::UnresolvedPlaceholder(_)
                | Error::Config(_)
                | Error::UnknownQuery { .. }
        )
    }
}
