use acbias::arpa::ArpaError;
use acbias::context_graph::GraphError;
use acbias::decoder::DecodeError;
use acbias::eval::EvalError;
use acbias::graph_builder::ConfigError;
use acbias::subword::VocabError;
use thiserror::Error;

/// Bad flags, bad config file, missing inputs.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Malformed input file content not covered by a library error type.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct FormatError(pub String);

/// A bench or demo run finished but missed its threshold.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    CheckFailed = 1,
    Config = 2,
    Format = 3,
    Runtime = 4,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Picks the exit code from the first recognised error in the chain.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return ExitKind::Config;
        }
        if let Some(e) = cause.downcast_ref::<DecodeError>() {
            return match e {
                DecodeError::Config(_) => ExitKind::Config,
                _ => ExitKind::Format,
            };
        }
        if let Some(e) = cause.downcast_ref::<ArpaError>() {
            return match e {
                ArpaError::Io(_) => ExitKind::Runtime,
                _ => ExitKind::Format,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::NonPositiveWallTime(_) | EvalError::NegativeAudio(_) => ExitKind::Runtime,
                _ => ExitKind::Format,
            };
        }
        if cause.is::<FormatError>()
            || cause.is::<GraphError>()
            || cause.is::<VocabError>()
            || cause.is::<serde_json::Error>()
        {
            return ExitKind::Format;
        }
        if cause.is::<CheckFailed>() {
            return ExitKind::CheckFailed;
        }
    }
    ExitKind::Runtime
}
