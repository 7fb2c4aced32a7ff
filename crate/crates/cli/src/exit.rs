//! Process exit codes.

use atms_kd::tensor::TensorError;
use atms_kd::KdError;

pub const OK: u8 = 0;
pub const IO: u8 = 1;
pub const USAGE: u8 = 2;
pub const DIVERGENCE: u8 = 3;
pub const MISMATCH: u8 = 4;

/// Usage problems detected in the CLI itself rather than the library.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<KdError>() {
            return kd_code(e);
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    IO
}

fn kd_code(e: &KdError) -> u8 {
    match e {
        KdError::Io { .. } | KdError::Checkpoint { .. } | KdError::Format { .. } => IO,
        KdError::Config(_) | KdError::Spec(_) | KdError::Data(_) | KdError::Usage(_) => USAGE,
        KdError::Divergence { .. } => DIVERGENCE,
        KdError::Mismatch(_) => MISMATCH,
        KdError::Tensor(TensorError::NonFinite { .. }) => DIVERGENCE,
        KdError::Tensor(_) => USAGE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_error_kind() {
        let div = KdError::Divergence { epoch: 1, batch: 2, reason: "nan".into() };
        assert_eq!(code_for(&div.into()), DIVERGENCE);
        assert_eq!(code_for(&KdError::Mismatch("classes".into()).into()), MISMATCH);
        assert_eq!(code_for(&KdError::Config("width".into()).into()), USAGE);
        assert_eq!(code_for(&KdError::Tensor(TensorError::NonFinite { op: "exp" }).into()), DIVERGENCE);
        let io = KdError::io("x", std::io::Error::other("gone"));
        assert_eq!(code_for(&anyhow::Error::from(io).context("loading")), IO);
        let wrapped: anyhow::Result<()> = Err(usage("bad grid"));
        assert_eq!(code_for(&wrapped.context("analyze").unwrap_err()), USAGE);
    }
}
