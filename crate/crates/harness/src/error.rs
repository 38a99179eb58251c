use ridge_core::RidgeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] RidgeError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Core(RidgeError::Config(_)) | HarnessError::Json(_))
    }
}

/// Process exit codes of the CLI.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const DIVERGED: i32 = 2;
    pub const CONFIG: i32 = 3;
}

/// "Did you mean" list: known names sorted by edit distance to `name`.
pub fn suggestions<'a>(name: &str, known: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = known.into_iter().map(|k| (strsim::levenshtein(name, k), k)).collect();
    scored.sort();
    scored.into_iter().map(|(_, k)| k).collect()
}
