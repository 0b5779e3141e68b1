use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("disturbance norm {norm:.6e} exceeds bound {bound:.6e}")]
    DisturbanceBound { norm: f64, bound: f64 },

    #[error("singular reference at s = {s}: path speed {speed:.3e}")]
    SingularReference { s: f64, speed: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("terminal synthesis failed: {0}")]
    Synthesis(String),

    #[error("tightened state set is empty (tau = {tau:?}, component {component})")]
    EmptyTightening { tau: Option<usize>, component: usize },

    /// A configuration gate failed. `check` names the gate.
    #[error("configuration rejected by `{check}`: {detail}")]
    Config { check: String, detail: String },

    #[error("rollout diverged at prediction step {step}")]
    DivergedRollout { step: usize },

    #[error("OCP infeasible: `{constraint}` violated by {violation:.3e}")]
    Infeasible { constraint: String, violation: f64 },

    #[error("no broadcast received from neighbor {neighbor}")]
    ColdStart { neighbor: usize },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            check: check.into(),
            detail: detail.into(),
        }
    }
}
