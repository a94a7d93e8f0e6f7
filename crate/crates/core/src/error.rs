use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] ursct_tensor::Error),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used for exit codes and one-line error reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
        }
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        use ursct_tensor::Error as T;
        match self {
            Error::Config(_) => Category::Config,
            Error::Data(_) | Error::Io { .. } | Error::Image { .. } | Error::Format(_) => Category::Data,
            Error::Numeric(_) => Category::Numeric,
            Error::Tensor(T::NonFinite { .. } | T::DivisionByZero { .. }) => Category::Numeric,
            Error::Tensor(_) => Category::Config,
        }
    }
}
