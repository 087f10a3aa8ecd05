use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// `|g_{v_i}(x)|` fell below the singularity tolerance.
    #[error("input channel {channel} is singular: |g_v| = {value:e}")]
    SingularChannel { channel: usize, value: f64 },

    /// `-mu_i < 0 < nu_i` does not hold at the evaluated state.
    #[error("input channel {channel} lost control authority: mu = {mu}, nu = {nu}")]
    AssumptionViolation { channel: usize, mu: f64, nu: f64 },

    #[error("smoothing epsilon {epsilon:e} is not below 4*mu*nu = {bound:e} on channel {channel}")]
    EpsilonTooLarge {
        channel: usize,
        epsilon: f64,
        bound: f64,
    },

    #[error("state outside the modeled region: {0}")]
    Domain(String),

    #[error("channel index {index} out of range (count {count})")]
    ChannelOutOfRange { index: usize, count: usize },

    #[error("invalid {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("{what} lies outside the admissible input set")]
    InputOutOfBounds { what: &'static str },

    #[error("rollout failed at t = {time}: {source}")]
    Rollout {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("greedy maneuver undefined: d_{channel} = 0")]
    GreedyTie { channel: usize },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    /// The channel named by the error, when there is one.
    pub fn channel(&self) -> Option<usize> {
        match self {
            Error::SingularChannel { channel, .. }
            | Error::AssumptionViolation { channel, .. }
            | Error::EpsilonTooLarge { channel, .. }
            | Error::GreedyTie { channel } => Some(*channel),
            Error::Rollout { source, .. } => source.channel(),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
