use thiserror::Error;
use warpmatch::descriptors::DescriptorError;
use warpmatch::eval::EvalError;
use warpmatch::exemplar::ExemplarError;
use warpmatch::matcher::MatchError;
use warpmatch::posegraph::PoseGraphError;
use warpmatch::propagate::PropagateError;
use warpmatch::raster::RasterError;
use warpmatch::reconstruct::ReconstructError;
use warpmatch::tps::TpsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Data { stage: String, message: String },
    #[error("{stage}: numerical failure: {message}")]
    Numerical { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Numerical { .. } => 3,
        }
    }

    pub fn data(stage: &str, message: impl std::fmt::Display) -> Self {
        CliError::Data {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    /// Prefixes the message with `ctx`, e.g. the item being processed.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{ctx}: {m}")),
            CliError::Data { stage, message } => CliError::Data {
                stage,
                message: format!("{ctx}: {message}"),
            },
            CliError::Numerical { stage, message } => CliError::Numerical {
                stage,
                message: format!("{ctx}: {message}"),
            },
        }
    }

    pub fn numerical(stage: &str, message: impl std::fmt::Display) -> Self {
        CliError::Numerical {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

/// Tags a library error with the stage it came from and picks its exit class.
pub trait Staged<T> {
    fn stage(self, stage: &str) -> Result<T, CliError>;
}

/// Whether an error means the numbers went wrong rather than the inputs.
pub trait Classify {
    fn is_numerical(&self) -> bool {
        false
    }
}

impl Classify for TpsError {
    fn is_numerical(&self) -> bool {
        matches!(self, TpsError::SingularSystem(_))
    }
}

impl Classify for ExemplarError {
    fn is_numerical(&self) -> bool {
        matches!(self, ExemplarError::Tps(e) if e.is_numerical())
    }
}

impl Classify for ReconstructError {
    fn is_numerical(&self) -> bool {
        matches!(
            self,
            ReconstructError::DivergedFactorization { .. } | ReconstructError::Numerical(_)
        )
    }
}

impl Classify for DescriptorError {}
impl Classify for EvalError {}
impl Classify for MatchError {}
impl Classify for PoseGraphError {}
impl Classify for PropagateError {}
impl Classify for RasterError {}
impl Classify for std::io::Error {}
impl Classify for serde_json::Error {}

/// Wraps a library error as a data or numerical failure of `stage`.
pub fn staged<E: Classify + std::fmt::Display>(stage: &str, e: E) -> CliError {
    if e.is_numerical() {
        CliError::numerical(stage, e)
    } else {
        CliError::data(stage, e)
    }
}

impl<T, E: Classify + std::fmt::Display> Staged<T> for Result<T, E> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| staged(stage, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        let singular: Result<(), TpsError> = Err(TpsError::SingularSystem("collinear".into()));
        assert_eq!(singular.stage("fitgrid").unwrap_err().exit_code(), 3);
        let io: Result<(), std::io::Error> = Err(std::io::Error::other("gone"));
        let e = io.stage("load").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().starts_with("load: "));
    }
}
