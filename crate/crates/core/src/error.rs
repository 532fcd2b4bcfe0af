use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // metric validation
    #[error("distance matrix is not square: {rows} rows, row {row} has {cols} entries")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("empty metric space")]
    EmptyMetric,
    #[error("asymmetric matrix: d({i},{j}) = {dij} but d({j},{i}) = {dji}")]
    AsymmetricMatrix { i: usize, j: usize, dij: f64, dji: f64 },
    #[error("nonzero diagonal: d({i},{i}) = {value}")]
    NonzeroDiagonal { i: usize, value: f64 },
    #[error("triangle violation: d({i},{j}) = {dij} > d({i},{via}) + d({via},{j}) = {detour}")]
    TriangleViolation { i: usize, j: usize, via: usize, dij: f64, detour: f64 },
    #[error("entry d({i},{j}) = {value} outside [0, 1]")]
    EntryOutOfRange { i: usize, j: usize, value: f64 },
    #[error("exact mode supports at most {max} points, got {k}")]
    ExactTooLarge { k: usize, max: usize },
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("bad spec: {0}")]
    BadSpec(String),

    // trees
    #[error("unknown action {0}")]
    UnknownAction(usize),
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("tree of depth {0} is too shallow to collapse")]
    TooShallow(usize),
    #[error("tree has {tree} actions but metric has {metric} points")]
    ActionMismatch { tree: usize, metric: usize },
    #[error("dominance violated: 4 * tree({i},{j}) = {scaled} < d({i},{j}) = {dist}")]
    DominanceViolation { i: usize, j: usize, scaled: f64, dist: f64 },
    #[error("reshaping did not terminate after {0} steps")]
    NonTermination(usize),

    // policies
    #[error("learning rate must be positive and finite, got {0}")]
    BadEta(f64),
    #[error("exploration rate must lie in [0, 1], got {0}")]
    BadGamma(f64),
    #[error("loss {0} outside [0, 1]")]
    OutOfRangeLoss(f64),
    #[error("observe called before select in this round")]
    NotSelected,
    #[error("estimate {value} for action {i} is below -1/eta = {floor}")]
    EstimateTooNegative { i: usize, value: f64, floor: f64 },
    #[error("probability and cost vectors differ in length ({p} vs {c})")]
    LengthMismatch { p: usize, c: usize },

    // harness
    #[error("oracle horizon {oracle} does not match run horizon {run}")]
    HorizonMismatch { oracle: usize, run: usize },
    #[error("loss matrix has shape {rows}x{cols}, expected {want_rows}x{want_cols}")]
    FileShapeMismatch { rows: usize, cols: usize, want_rows: usize, want_cols: usize },
    #[error("enumeration of {outcomes} outcomes exceeds the limit {limit}")]
    EnumerationTooLarge { outcomes: u64, limit: u64 },
    #[error("dimension {0} is not supported (1..=3)")]
    DimensionUnsupported(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::DominanceViolation { .. }
                | Error::NonTermination(_)
                | Error::EstimateTooNegative { .. }
                | Error::NotSelected
                | Error::Io(_)
        )
    }
}
