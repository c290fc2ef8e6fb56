use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario parse error at {location}: {message}")]
    ScenarioParse { location: String, message: String },

    #[error("scenario invariant violated ({field}): {message}")]
    ScenarioInvariant { field: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("object out of bounds: {0}")]
    OutOfBounds(String),

    #[error("unknown object id {0}")]
    UnknownObject(u64),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("bad config value for `{key}`: {message}")]
    BadConfigValue { key: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
