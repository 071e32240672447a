use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration has {} problem(s):\n  - {}", .0.len(), .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("block diagonalization infeasible for RIS {ris}: interference rank {rank} leaves no null space in {n_tx} antennas")]
    BdInfeasible {
        ris: usize,
        rank: usize,
        n_tx: usize,
    },

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("power budget exceeded: requested {requested:.6e} W, budget {budget:.6e} W")]
    PowerBudget { requested: f64, budget: f64 },

    #[error("numerically degenerate input: {0}")]
    NumericDegenerate(String),

    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
