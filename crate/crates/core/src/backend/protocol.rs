//! Wire types for protocol v1. See `PROTOCOL.md` at the repository root.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const FULL_VECTOR_TOLERANCE: f64 = 1e-4;

fn is_false(b: &bool) -> bool {
    !*b
}

/// Score the surface tokens at `masked_positions`, all masked at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedScoreRequest {
    pub request_id: String,
    pub text_tokens: Vec<String>,
    pub masked_positions: Vec<usize>,
    /// Extra surfaces to score, one list per masked position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<String>>>,
    /// Ask for the whole log-distribution at each position.
    #[serde(default, skip_serializing_if = "is_false")]
    pub full_distribution: bool,
}

impl MaskedScoreRequest {
    pub fn new(request_id: impl Into<String>, text_tokens: Vec<String>, masked_positions: Vec<usize>) -> Self {
        MaskedScoreRequest {
            request_id: request_id.into(),
            text_tokens,
            masked_positions,
            candidates: None,
            full_distribution: false,
        }
    }

    pub fn with_full_distribution(mut self) -> Self {
        self.full_distribution = true;
        self
    }

    pub fn with_candidates(mut self, candidates: Vec<Vec<String>>) -> Self {
        self.candidates = Some(candidates);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.masked_positions.is_empty() {
            return Err(Error::Empty("masked positions"));
        }
        let mut seen = HashSet::new();
        for &p in &self.masked_positions {
            if p >= self.text_tokens.len() {
                return Err(Error::PositionOutOfRange {
                    position: p,
                    len: self.text_tokens.len(),
                });
            }
            if !seen.insert(p) {
                return Err(Error::Invalid(format!("position {p} listed twice")));
            }
        }
        if let Some(c) = &self.candidates {
            if c.len() != self.masked_positions.len() {
                return Err(Error::Invalid(
                    "one candidate list per masked position is required".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScores {
    pub position: usize,
    /// Log-probability of the original surface at this position.
    pub gold_logprob: f64,
    /// Index of the gold surface in `vocabulary`, when it is a single entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedScoreResponse {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    pub positions: Vec<PositionScores>,
}

/// Error line a bridge emits instead of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorLine {
    pub request_id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol: u32,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub hello: Hello,
}

impl Handshake {
    pub fn new(model: impl Into<String>) -> Self {
        Handshake {
            hello: Hello {
                protocol: PROTOCOL_VERSION,
                model: model.into(),
            },
        }
    }

    /// Parses a handshake line and checks the protocol version.
    pub fn parse(line: &str) -> Result<Handshake> {
        let h: Handshake = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("bad handshake `{}`: {e}", line.trim_end())))?;
        if h.hello.protocol != PROTOCOL_VERSION {
            return Err(Error::VersionMismatch {
                expected: PROTOCOL_VERSION,
                found: h.hello.protocol,
            });
        }
        Ok(h)
    }
}

fn check_logprob(x: f64, what: &str) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::InvalidResponse(format!("{what} is not finite ({x})")));
    }
    if x > 0.0 {
        return Err(Error::InvalidResponse(format!("{what} is positive ({x})")));
    }
    Ok(())
}

impl MaskedScoreResponse {
    /// Parses one response line; a bridge error line becomes `Error::Protocol`.
    pub fn parse_line(line: &str) -> Result<MaskedScoreResponse> {
        let value: serde_json::Value = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response line: {e}")))?;
        if value.get("error").is_some() {
            let err: ErrorLine =
                serde_json::from_value(value).map_err(|e| Error::Protocol(format!("malformed error line: {e}")))?;
            return Err(Error::Protocol(format!("bridge reported: {}", err.error)));
        }
        serde_json::from_value(value).map_err(|e| Error::Protocol(format!("malformed response line: {e}")))
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Checks every response invariant against the request that produced it.
    pub fn validate_against(&self, request: &MaskedScoreRequest) -> Result<()> {
        if self.request_id != request.request_id {
            return Err(Error::IdMismatch {
                sent: request.request_id.clone(),
                received: self.request_id.clone(),
            });
        }
        let got: Vec<usize> = self.positions.iter().map(|p| p.position).collect();
        if got != request.masked_positions {
            return Err(Error::InvalidResponse(format!(
                "positions {got:?} do not match requested {:?}",
                request.masked_positions
            )));
        }
        if request.full_distribution && self.vocabulary.is_none() {
            return Err(Error::InvalidResponse(
                "full distribution requested but no vocabulary sent".into(),
            ));
        }
        for (j, p) in self.positions.iter().enumerate() {
            check_logprob(p.gold_logprob, &format!("gold log-prob at position {}", p.position))?;
            if let Some(c) = &request.candidates {
                let scores = p.candidate_logprobs.as_ref().ok_or_else(|| {
                    Error::InvalidResponse(format!("missing candidate scores at position {}", p.position))
                })?;
                if scores.len() != c[j].len() {
                    return Err(Error::InvalidResponse(format!(
                        "{} candidate scores for {} candidates at position {}",
                        scores.len(),
                        c[j].len(),
                        p.position
                    )));
                }
                for &s in scores {
                    check_logprob(s, &format!("candidate log-prob at position {}", p.position))?;
                }
            }
            match (&p.logprobs, &self.vocabulary) {
                (Some(lp), Some(vocab)) => {
                    if lp.len() != vocab.len() {
                        return Err(Error::InvalidResponse(format!(
                            "vector of length {} for a vocabulary of {}",
                            lp.len(),
                            vocab.len()
                        )));
                    }
                    let mut mass = 0.0;
                    for &x in lp {
                        check_logprob(x, &format!("log-prob at position {}", p.position))?;
                        mass += x.exp();
                    }
                    if (mass - 1.0).abs() > FULL_VECTOR_TOLERANCE {
                        return Err(Error::InvalidResponse(format!(
                            "distribution at position {} sums to {mass}",
                            p.position
                        )));
                    }
                    if let Some(g) = p.gold_index {
                        if g >= vocab.len() {
                            return Err(Error::InvalidResponse(format!("gold index {g} outside the vocabulary")));
                        }
                    }
                }
                (Some(_), None) => {
                    return Err(Error::InvalidResponse("log-prob vector without a vocabulary".into()));
                }
                (None, _) if request.full_distribution => {
                    return Err(Error::InvalidResponse(format!(
                        "missing distribution at position {}",
                        p.position
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
