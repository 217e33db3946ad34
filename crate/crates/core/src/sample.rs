//! Sampled answers and their conditioning context.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which prompt the sample was drawn under: the question alone (`B`) or the
/// question plus retrieved evidence (`C`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextTag {
    #[serde(rename = "B")]
    Prior,
    #[serde(rename = "C")]
    Posterior,
}

impl std::fmt::Display for ContextTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContextTag::Prior => "prior",
            ContextTag::Posterior => "posterior",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("log-likelihood {0} is positive")]
    PositiveLogprob(f64),
    #[error("token log-likelihoods sum to {tokens}, total says {total}")]
    TokenSumMismatch { tokens: f64, total: f64 },
    #[error("non-finite log-likelihood")]
    NonFinite,
}

/// One sampled answer. This is also the line schema of `samples.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub context: ContextTag,
    pub text: String,
    /// Sequence log-likelihood in nats; absent when the generator did not
    /// report likelihoods.
    #[serde(rename = "logprob", default, skip_serializing_if = "Option::is_none")]
    pub total_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl AnswerSample {
    pub fn new(context: ContextTag, text: impl Into<String>, total_logprob: f64) -> Self {
        Self {
            context,
            text: text.into(),
            total_logprob: Some(total_logprob),
            token_logprobs: None,
        }
    }

    /// Sample whose total is the sum of the given per-token values.
    pub fn from_tokens(context: ContextTag, text: impl Into<String>, token_logprobs: Vec<f64>) -> Self {
        Self {
            context,
            text: text.into(),
            total_logprob: Some(token_logprobs.iter().sum()),
            token_logprobs: Some(token_logprobs),
        }
    }

    pub fn without_likelihood(context: ContextTag, text: impl Into<String>) -> Self {
        Self {
            context,
            text: text.into(),
            total_logprob: None,
            token_logprobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if let Some(total) = self.total_logprob {
            if !total.is_finite() {
                return Err(SampleError::NonFinite);
            }
            if total > 1e-9 {
                return Err(SampleError::PositiveLogprob(total));
            }
            if let Some(tokens) = &self.token_logprobs {
                let sum: f64 = tokens.iter().sum();
                if (sum - total).abs() > 1e-6 {
                    return Err(SampleError::TokenSumMismatch { tokens: sum, total });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_schema() {
        let s = AnswerSample::from_tokens(ContextTag::Posterior, "Paris", vec![-0.25, -0.5]);
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"context":"C","text":"Paris","logprob":-0.75,"token_logprobs":[-0.25,-0.5]}"#
        );
        let bare: AnswerSample = serde_json::from_str(r#"{"context":"B","text":"x"}"#).unwrap();
        assert_eq!(bare.total_logprob, None);
        assert_eq!(serde_json::to_string(&bare).unwrap(), r#"{"context":"B","text":"x"}"#);
    }

    #[test]
    fn validation() {
        assert!(AnswerSample::new(ContextTag::Prior, "a", 0.5).validate().is_err());
        let mut s = AnswerSample::from_tokens(ContextTag::Prior, "a", vec![-1.0, -2.0]);
        assert!(s.validate().is_ok());
        s.total_logprob = Some(-2.0);
        assert!(matches!(s.validate(), Err(SampleError::TokenSumMismatch { .. })));
        assert!(AnswerSample::new(ContextTag::Prior, "a", f64::NAN).validate().is_err());
    }
}
