use std::path::PathBuf;

use crate::network::RouteId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("route {route}: {message}")]
    Route { route: RouteId, message: String },

    #[error("train {code}: {message}")]
    Train { code: String, message: String },

    #[error("unknown train code {0:?}")]
    UnknownTrain(String),

    #[error("unknown station {0:?}")]
    UnknownStation(String),

    #[error("demand split needs a nonempty stop set")]
    EmptyStopSet,

    #[error("total attractiveness over the stop set is zero")]
    ZeroAttractiveness,

    #[error("clock must advance monotonically: at {current}, asked for {requested}")]
    NonMonotoneClock { current: f64, requested: f64 },

    #[error("state dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("model file: {0}")]
    Model(String),

    #[error("non-finite parameter after update in layer {layer}")]
    NonFinite { layer: usize },

    #[error("search space too large: {estimate} sequences (limit {limit})")]
    SearchTooLarge { estimate: f64, limit: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
