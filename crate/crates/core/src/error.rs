use thiserror::Error;

/// Errors produced by the synthesis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid matrix data: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("gate {gate} {reason}")]
    GateAngle { gate: &'static str, reason: &'static str },

    #[error("invalid qubit list: {0}")]
    InvalidQubits(String),

    #[error("unsupported qubit count {0} (only 2 and 3 are supported)")]
    UnsupportedQubits(usize),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("parameter length mismatch: template needs {expected}, got {actual}")]
    ParamLength { expected: usize, actual: usize },

    #[error("slot count mismatch: template has {expected} slots, got {actual}")]
    SlotCount { expected: usize, actual: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("model kind mismatch: expected {expected}, found {found}")]
    ModelKind { expected: String, found: String },

    #[error("template family hash mismatch: expected {expected}, found {found}")]
    FamilyMismatch { expected: String, found: String },

    #[error("target is not representable in the template family (best fidelity {best_fidelity:.6})")]
    NotRepresentable { best_fidelity: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
