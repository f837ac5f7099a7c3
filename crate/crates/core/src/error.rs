use thiserror::Error;

pub type Result<T> = std::result::Result<T, QnbmError>;

#[derive(Debug, Error)]
pub enum QnbmError {
    #[error("qubit count {requested} outside supported range 1..={max}")]
    QubitCountOutOfRange { requested: usize, max: usize },

    #[error("qubit index {index} out of range for {n_qubits}-qubit state")]
    QubitIndexOutOfRange { index: usize, n_qubits: usize },

    #[error("gate uses qubit {0} more than once")]
    DuplicateQubit(usize),

    #[error("gate {0} is not unitary and cannot be applied directly")]
    NonUnitaryGate(&'static str),

    #[error("projection of qubit {qubit} onto {value} has zero probability")]
    ZeroProbabilityBranch { qubit: usize, value: u8 },

    #[error("ancilla qubit {0} is not in |0⟩ before the block")]
    AncillaNotReset(usize),

    #[error("marginal requested over an empty qubit subset")]
    EmptySubset,

    #[error("classical register capacity {capacity} exhausted")]
    RegisterOverflow { capacity: usize },

    #[error("classical register {index} has not been written")]
    RegisterUnset { index: usize },

    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("hidden layers unsupported")]
    HiddenLayersUnsupported,

    #[error("invalid neuron structure: {0}")]
    InvalidStructure(String),

    #[error("parameter {value} outside the open interval (-1, 1)")]
    ParameterOutOfRange { value: f64 },

    #[error("cardinality {cardinality} outside 0..={n_bits}")]
    CardinalityOutOfRange { cardinality: usize, n_bits: usize },

    #[error("branch enumeration exceeded cap of {0} branches")]
    BranchCapExceeded(usize),

    #[error("trend fit needs at least two distinct x values")]
    DegenerateTrend,

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QnbmError {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        QnbmError::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
