use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("catalog line {line}: {msg}")]
    CatalogParse { line: usize, msg: String },

    #[error("duplicate type_id {0} in catalog")]
    DuplicateTypeId(u16),

    #[error("catalog must contain at least one entry")]
    EmptyCatalog,

    #[error("catalog type ids must be contiguous from 1, missing {0}")]
    NonContiguousIds(u16),

    #[error("unknown type_id {0}")]
    UnknownTypeId(u16),

    #[error("no catalog entry for {element} type={kind:?} material={material:?}")]
    UnknownObject {
        element: String,
        kind: String,
        material: String,
    },

    #[error("xml error at byte {position}: {msg}")]
    Xml { position: u64, msg: String },

    #[error("attribute {attribute} is not a finite number: {value:?}")]
    NonFinite { attribute: String, value: String },

    #[error("level needs more than {max_rows} rows (object {object})")]
    RowOverflow { max_rows: usize, object: usize },

    #[error("cell ({row}, {col}) already holds type {existing}")]
    CellCollision { row: usize, col: usize, existing: u16 },

    #[error("column {col} outside [0, {max_col})")]
    ColumnOutOfRange { col: usize, max_col: usize },

    #[error("{what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("sentence length {len} too short for context window {window}")]
    CorpusTooShort { len: usize, window: usize },

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fitness value {index} is NaN")]
    NanFitness { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rejection budget of {retries} attempts exhausted for level {level}")]
    RejectionExhausted { level: usize, retries: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }
}
