use std::path::PathBuf;

use pomdp_nac_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{}: parse error{}{}: {message}", path.display(), line.map(|l| format!(" at line {l}")).unwrap_or_default(), field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: CoreError,
    },
}

impl HarnessError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Parse { .. } | Self::Validation(_) => 2,
            Self::Core { source, .. } => match source {
                CoreError::InvalidModel(_) | CoreError::InvalidConfig(_) | CoreError::DimensionMismatch { .. } => 2,
                _ => 3,
            },
            Self::Io { .. } => 3,
        }
    }

    /// Reading an input: a missing file is a validation error.
    pub(crate) fn input(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| match source.kind() {
            std::io::ErrorKind::NotFound => Self::Validation(vec![format!("{} does not exist", path.display())]),
            _ => Self::Io { path, source },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

/// Attaches the originating module to a core error.
pub(crate) trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> InModule<T> for Result<T, CoreError> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|source| HarnessError::Core { module, source })
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
