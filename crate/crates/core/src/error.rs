use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Encode,
    Original,
    Object,
    Edited,
    Refocus,
    Expansion,
    Segmentation,
    Inversion,
    Decode,
    Metrics,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Encode => "encode",
            Stage::Original => "original",
            Stage::Object => "object",
            Stage::Edited => "edited",
            Stage::Refocus => "refocus",
            Stage::Expansion => "expansion",
            Stage::Segmentation => "segmentation",
            Stage::Inversion => "inversion",
            Stage::Decode => "decode",
            Stage::Metrics => "metrics",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("resolution error: cannot resample {from:?} to {to:?}")]
    Resolution {
        from: (usize, usize),
        to: (usize, usize),
    },

    #[error("token overflow: {needed} rows needed, encoder window is {window}")]
    Overflow { needed: usize, window: usize },

    #[error("degenerate attention: row {token} has zero total mass")]
    DegenerateAttention { token: usize },

    #[error("guidance diverged after {} iterations", history.len())]
    GuidanceDiverged { history: Vec<f64> },

    #[error("trajectory alignment: timestep {left} vs {right}")]
    TrajectoryAlignment { left: usize, right: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("backend lacks capability: {0}")]
    Capability(&'static str),

    #[error("terminal state: cannot denoise past t = 0")]
    TerminalState,

    #[error("segmentation failed: {0}")]
    Segmentation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{stage} stage failed{}: {source}", step.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    Stage {
        stage: Stage,
        step: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn at_stage(self, stage: Stage, step: Option<usize>) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                step,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            Error::Stage { step, .. } => *step,
            _ => None,
        }
    }

    /// Stable snake_case name of the innermost error variant.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Shape(_) => "shape",
            Error::Resolution { .. } => "resolution",
            Error::Overflow { .. } => "overflow",
            Error::DegenerateAttention { .. } => "degenerate_attention",
            Error::GuidanceDiverged { .. } => "guidance_diverged",
            Error::TrajectoryAlignment { .. } => "trajectory_alignment",
            Error::Config(_) => "config",
            Error::Capability(_) => "capability",
            Error::TerminalState => "terminal_state",
            Error::Segmentation(_) => "segmentation",
            Error::Parse { .. } => "parse",
            Error::NonFinite(_) => "non_finite",
            Error::Contract(_) => "contract",
            Error::Stage { .. } => unreachable!("root skips stage tags"),
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 for bad input, 3 for backend failures,
    /// 4 for segmentation failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Parse { .. } | Error::Overflow { .. } | Error::Json(_) => 2,
            Error::Segmentation(_) => 4,
            Error::Capability(_)
            | Error::Contract(_)
            | Error::TerminalState
            | Error::Shape(_)
            | Error::Resolution { .. }
            | Error::NonFinite(_)
            | Error::GuidanceDiverged { .. }
            | Error::DegenerateAttention { .. }
            | Error::TrajectoryAlignment { .. } => 3,
            Error::Io(_) | Error::Image(_) | Error::Stage { .. } => 1,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            kind: self.kind().to_owned(),
            message: self.to_string(),
            stage: self.stage(),
            step: self.step(),
            field: None,
        }
    }
}

/// Serializable description of a failure.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    pub stage: Option<Stage>,
    pub step: Option<usize>,
    /// Offending request field, for validation failures.
    pub field: Option<String>,
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage, step: Option<usize>) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage, step: Option<usize>) -> Result<T> {
        self.map_err(|e| e.at_stage(stage, step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_tag_is_outermost_and_not_doubled() {
        let e = Error::Segmentation("empty".into())
            .at_stage(Stage::Segmentation, None)
            .at_stage(Stage::Edited, Some(3));
        assert_eq!(e.stage(), Some(Stage::Segmentation));
        assert_eq!(e.kind(), "segmentation");
        assert_eq!(e.exit_code(), 4);
        let body = e.body();
        assert_eq!(body.stage, Some(Stage::Segmentation));
        assert_eq!(body.step, None);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Capability("inversion").at_stage(Stage::Inversion, None).exit_code(), 3);
        assert_eq!(Error::Parse { line: 5, message: String::new() }.exit_code(), 2);
    }
}
