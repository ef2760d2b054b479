use thiserror::Error;

/// Errors raised across the emulation, tailoring and analysis stack.
#[derive(Debug, Error)]
pub enum NtError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported gate: {0}")]
    UnsupportedGate(String),
    #[error("singular channel: fidelity at index {index} is zero, channel is not invertible")]
    SingularChannel { index: usize },
    #[error("quasi-probability channel not allowed here (entry {index} = {value})")]
    QuasiChannelNotAllowed { index: usize, value: f64 },
    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    IndexOutOfRange { index: usize, n_qubits: usize },
    #[error("noise model does not cover junction `{0}`")]
    ModelCoverage(String),
    #[error("no quasi-probability plan for junction `{0}`")]
    PlanCoverage(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("degenerate readout response: {0}")]
    DegenerateResponse(String),
    #[error("family `{0}` cannot be fitted: no positive signal at any depth")]
    UnfittableFamily(String),
    #[error("sanitization failed: {0}")]
    Sanitization(String),
    #[error("NEC fidelity undefined: ideal expectation of `{0}` vanishes")]
    UndefinedFidelity(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("AWAE undefined: all reference values are zero")]
    UndefinedAwae,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<NtError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NtError>;

impl NtError {
    pub fn in_stage(self, stage: &'static str) -> NtError {
        NtError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
