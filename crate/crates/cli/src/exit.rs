use std::fmt;

use primlight::Error as CoreError;

pub const SUCCESS: i32 = 0;
pub const FAILURE: i32 = 1;
pub const CONFIG: i32 = 2;
pub const NUMERIC: i32 = 3;

/// Bad flags, missing inputs or incompatible checkpoints.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Non-finite values or a failed numeric verification.
#[derive(Debug)]
pub struct NumericError(pub String);

impl fmt::Display for NumericError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericError {}

/// Process exit code for an error chain.
pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<NumericError>() {
            return NUMERIC;
        }
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::NonFiniteGradient(_) | CoreError::NonFiniteLoss { .. } => NUMERIC,
                CoreError::Io(_) => FAILURE,
                _ => CONFIG,
            };
        }
    }
    FAILURE
}
