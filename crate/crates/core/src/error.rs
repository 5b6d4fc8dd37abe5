use thiserror::Error;

/// Errors shared across the coder, codecs and container formats.
#[derive(Debug, Error)]
pub enum CoderError {
    /// Decoding consumed more information than the message contains.
    #[error("message underflow: tail exhausted while decoding{}", shortfall_hint(*.shortfall_bits))]
    Underflow { shortfall_bits: Option<u64> },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid precisions: {0}")]
    InvalidPrecisions(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("insufficient initial bits: need at least {needed} bits, have {have}")]
    InsufficientInitBits { needed: u64, have: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn shortfall_hint(shortfall: Option<u64>) -> String {
    match shortfall {
        Some(n) => format!(" (at least {n} more bits required)"),
        None => String::new(),
    }
}

impl CoderError {
    pub fn underflow() -> Self {
        CoderError::Underflow {
            shortfall_bits: None,
        }
    }
}
