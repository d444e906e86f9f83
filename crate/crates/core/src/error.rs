use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants map onto the process exit codes used by the runner:
/// configuration and precondition problems are usage errors, failed
/// invariants are assertion failures, everything else is numeric.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context} at step {step:?}, particle {particle}")]
    NonFinite {
        context: &'static str,
        step: Option<usize>,
        particle: usize,
    },

    #[error("degenerate matrix{}: min eigenvalue {eigenvalue:e} below floor {floor:e}", location_suffix(.location))]
    Degenerate {
        eigenvalue: f64,
        floor: f64,
        location: Option<(usize, usize)>,
    },

    #[error("domain error at step {step}: {reason}")]
    Domain { step: usize, reason: String },

    #[error("seed stream collision: streams [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    StreamCollision {
        a_start: u64,
        a_end: u64,
        b_start: u64,
        b_end: u64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn location_suffix(loc: &Option<(usize, usize)>) -> String {
    match loc {
        Some((step, particle)) => format!(" at step {step}, particle {particle}"),
        None => String::new(),
    }
}

impl Error {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Dimension { .. } | Error::Precondition(_) | Error::StreamCollision { .. }
        )
    }

    /// Process exit code: 2 for usage errors, 4 for failed assertions, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_usage() {
            2
        } else if matches!(self, Error::Assertion(_)) {
            4
        } else {
            3
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
