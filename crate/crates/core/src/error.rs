use thiserror::Error;

/// Errors shared across the engine, analysis, and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} is not valid in {game}")]
    InvalidAction { game: String, action: String },
    #[error("expected {expected} actions, got {got}")]
    ArityError { expected: usize, got: usize },
    #[error("history has {have} rounds but round {t} requires {need}")]
    InconsistentHistory { t: u32, need: usize, have: usize },
    #[error("player index {0} out of range")]
    InvalidPlayer(usize),
    #[error("polar sanitization requires at least one real round")]
    NoEmpiricalDistribution,
    #[error("no action token found in response")]
    ParseFailure,
    #[error("match aborted: {0}")]
    MatchAborted(String),
    #[error("replay diverged at round {round}")]
    ReplayDivergence { round: u32 },
    #[error("replay is only supported for scripted-only matches")]
    UnsupportedReplay,
    #[error("run log contains no rounds")]
    EmptyRun,
    #[error("run log contains no reasoning traces")]
    NoTraces,
    #[error("player groups must be disjoint and non-empty")]
    InvalidGrouping,
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("transport error after {attempts} attempts: {message}")]
    TransportError { attempts: u32, message: String },
    #[error("judge response could not be parsed: {0}")]
    JudgeParseError(String),
    #[error("record is missing judge scores")]
    MissingScores,
    #[error("family-level split needs at least two prefix families")]
    SplitImpossible,
    #[error("experiment plan has an empty axis: {0}")]
    EmptyPlan(String),
    #[error("no run logs found in {0}")]
    NoRuns(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
