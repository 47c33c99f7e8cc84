use std::path::PathBuf;

use serde_json::json;

/// Process exit codes. Usage errors reported by the argument parser also
/// exit with 2.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NON_FINITE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step}{}", layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    NonFiniteLoss { step: usize, layer: Option<usize> },
    #[error("invalid container: {0}")]
    Container(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error(transparent)]
    Core(ortho_hydra_core::Error),
}

impl From<ortho_hydra_core::Error> for CliError {
    fn from(e: ortho_hydra_core::Error) -> Self {
        use ortho_hydra_core::Error as E;
        match e {
            E::NonFiniteLoss { step, layer } => CliError::NonFiniteLoss { step, layer },
            E::InvalidConfig(m) => CliError::ConfigParse(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigParse(_) => "config_parse",
            CliError::Io { .. } => "io",
            CliError::NonFiniteLoss { .. } => "non_finite_loss",
            CliError::Container(_) => "container",
            CliError::VerifyFailed(_) => "verify_failed",
            CliError::Core(_) => "core",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::NonFiniteLoss { .. } => exit::NON_FINITE,
            _ => exit::FAILURE,
        }
    }

    /// Single-line JSON record for stderr.
    pub fn record(&self) -> serde_json::Value {
        let mut rec = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::NonFiniteLoss { step, layer } = self {
            rec["step"] = json!(step);
            rec["layer"] = json!(layer);
        }
        if let CliError::Io { path, .. } = self {
            rec["path"] = json!(path.display().to_string());
        }
        rec
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
