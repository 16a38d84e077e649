use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fusegp_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}, line {line}: {message}")]
    Parse { source_name: String, line: u64, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset not found: expected {}", .0.display())]
    MissingDataset(PathBuf),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
