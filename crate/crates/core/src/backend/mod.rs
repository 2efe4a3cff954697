//! Masked-token scoring contract shared by every evaluator, with an
//! in-process toy-model backend and a line-delimited JSON client for
//! external model bridges.

mod local;
pub mod protocol;
mod remote;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

pub use local::{score_local, LocalBackend};
pub use protocol::{
    ErrorLine, Handshake, Hello, MaskedScoreRequest, MaskedScoreResponse, PositionScores, PROTOCOL_VERSION,
};
pub use remote::{serve, RemoteBackend, DEFAULT_TIMEOUT};

use crate::error::{Error, Result};
use crate::mlm::load_checkpoint;

/// Anything that can answer a masked-scoring request.
pub trait MaskedScorer {
    fn score(&self, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse>;
    fn name(&self) -> &str;
}

impl<S: MaskedScorer + ?Sized> MaskedScorer for &S {
    fn score(&self, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
        (**self).score(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<S: MaskedScorer + ?Sized> MaskedScorer for Box<S> {
    fn score(&self, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
        (**self).score(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Process-unique request id.
pub fn next_request_id() -> String {
    format!("q{}", NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// Builds a request with a fresh id, sends it and checks the reply.
pub fn query(
    scorer: &dyn MaskedScorer,
    tokens: &[String],
    positions: &[usize],
    full_distribution: bool,
) -> Result<MaskedScoreResponse> {
    let mut request = MaskedScoreRequest::new(next_request_id(), tokens.to_vec(), positions.to_vec());
    request.full_distribution = full_distribution;
    let response = scorer.score(&request)?;
    response.validate_against(&request)?;
    Ok(response)
}

/// `local:<checkpoint>` or `bridge:<command line>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Local(PathBuf),
    Bridge(String),
}

impl FromStr for BackendSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("local", path)) if !path.is_empty() => Ok(BackendSpec::Local(path.into())),
            Some(("bridge", cmd)) if !cmd.trim().is_empty() => Ok(BackendSpec::Bridge(cmd.to_string())),
            _ => Err(Error::Invalid(format!(
                "backend `{s}` must be local:<checkpoint> or bridge:<command>"
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Local(p) => write!(f, "local:{}", p.display()),
            BackendSpec::Bridge(c) => write!(f, "bridge:{c}"),
        }
    }
}

impl BackendSpec {
    pub fn open(&self, timeout: Duration) -> Result<Box<dyn MaskedScorer + Send + Sync>> {
        match self {
            BackendSpec::Local(path) => {
                let (model, vocab) = load_checkpoint(path)?;
                let name = path
                    .file_stem()
                    .map_or("toy".into(), |s| s.to_string_lossy().into_owned());
                Ok(Box::new(LocalBackend::new(model, vocab, name)?))
            }
            BackendSpec::Bridge(cmd) => Ok(Box::new(RemoteBackend::spawn(cmd, timeout)?)),
        }
    }
}
