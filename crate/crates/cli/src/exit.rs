//! Process exit codes and the error markers that select them.

use std::fmt;

pub const SUCCESS: u8 = 0;
/// Bad flags or a referenced file that does not exist.
pub const USAGE: u8 = 1;
/// Inputs parsed but are inconsistent: bad config values, hash mismatches.
pub const VALIDATION: u8 = 2;
/// Anything that failed while doing the work.
pub const RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct UsageError(pub String);

#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for ValidationError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn validation(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

/// The exit code for an error, found by searching its cause chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.is::<ValidationError>() {
            return VALIDATION;
        }
    }
    RUNTIME
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_survive_context() {
        let e = Err::<(), _>(validation("bad")).context("while loading").unwrap_err();
        assert_eq!(code_for(&e), VALIDATION);
        assert_eq!(code_for(&usage("x")), USAGE);
        assert_eq!(code_for(&anyhow::anyhow!("boom")), RUNTIME);
    }
}
