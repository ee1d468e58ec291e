use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: duplicate timestamp {t} ms for {kind} samples")]
    NonMonotonicTime { line: usize, t: u64, kind: &'static str },
    #[error("trace contains no samples")]
    EmptyTrace,
    #[error("trace has no accelerometer samples")]
    NoAccelData,
    #[error("trace has no magnetometer samples")]
    NoMagData,
    #[error("actual step count must be positive")]
    ZeroActual,
    #[error("anchors are not sorted by time")]
    UnsortedAnchors,
    #[error("anchor at t={0} ms has no resolved position")]
    UnresolvedAnchor(u64),
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfGrid { x: f64, y: f64 },
    #[error("track `{track}` does not belong to trace `{trace}`")]
    TraceIdMismatch { track: String, trace: String },
    #[error("grid specs differ")]
    SpecMismatch,
    #[error("block has too few observations to derive features")]
    EmptyBlock,
    #[error("class counts are empty")]
    EmptyCounts,
    #[error("split leaves one side empty")]
    DegenerateSplit,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("fingerprint database is empty")]
    EmptyDatabase,
    #[error("scan contains no access points")]
    EmptyScan,
    #[error("infeasible layout: {0}")]
    InfeasibleLayout(String),
    #[error("grid has no blocks to render")]
    EmptyGrid,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
