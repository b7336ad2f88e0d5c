use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // dataset invariants
    #[error("record count mismatch: {0}")]
    CountMismatch(String),
    #[error("record {record_id}: candidate index {index} out of range (catalog has {rows} rows)")]
    IndexOutOfRange { record_id: String, index: usize, rows: usize },
    #[error("record {record_id}: positive {positive} is not in its candidate list")]
    MissingPositive { record_id: String, positive: usize },
    #[error("record {record_id}: candidate {index} listed more than once")]
    DuplicateCandidate { record_id: String, index: usize },
    #[error("duplicate record id {0}")]
    DuplicateRecordId(String),
    #[error("record {record_id}: {detail}")]
    InvalidRecord { record_id: String, detail: String },

    // model / training
    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },
    #[error("target row {row} has zero norm")]
    ZeroNormTarget { row: usize },
    #[error("candidate block {block}: positive slot {slot} outside block of {len}")]
    MissingPositiveInBlock { block: usize, slot: usize, len: usize },
    #[error("tape does not match: {0}")]
    TapeMismatch(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("no records with adduct {0:?}")]
    EmptySubset(String),

    // retrieval
    #[error("record {record_id}: formula filtering requested but formulas are missing")]
    MissingFormula { record_id: String },
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("empty input")]
    EmptyInput,

    // shift / splits
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("number of projections must be positive")]
    ZeroProjections,
    #[error("seed {seed}: within-train distance {value:e} is degenerate")]
    DegenerateDenominator { seed: u64, value: f64 },
    #[error("record {record_id} has no group key {key:?}")]
    MissingKey { key: String, record_id: String },
}

impl Error {
    /// Numerical failures, as opposed to bad data or bad configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateEmbedding { .. }
                | Error::NonFiniteGradient(_)
                | Error::DegenerateDenominator { .. }
                | Error::ZeroNormTarget { .. }
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }
}
