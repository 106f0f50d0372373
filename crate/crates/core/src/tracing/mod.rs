//! Causal tracing: corrupt the subject embeddings with Gaussian noise, then
//! restore clean internal states one at a time (or a window of MLP or
//! attention outputs) and measure how much of the correct prediction
//! returns.

mod average;
mod grid;
mod known;

pub use average::{average_grids, AveragedGrid};
pub use grid::{corrupted_run, noise_patches, restore_window, trace_grid, TraceConfig, TraceGrid, TraceSite};
pub use known::{select_known_prompts, KnownPrompts};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prompt the model completes correctly, with the subject located.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePrompt {
    pub text: String,
    pub tokens: Vec<usize>,
    /// Inclusive token span `[a, b]` of the subject.
    pub subject_span: (usize, usize),
    /// First token of the correct object.
    pub correct_object: usize,
    /// Probability of `correct_object` at the last position, clean run.
    pub clean_p: f64,
}

impl TracePrompt {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.subject_span;
        if a > b || b >= self.tokens.len() {
            return Err(Error::Bounds {
                what: "subject span end",
                index: b,
                limit: self.tokens.len(),
            });
        }
        if !(self.clean_p > 0.0 && self.clean_p <= 1.0) {
            return Err(Error::Config(format!("clean_p {} outside (0, 1]", self.clean_p)));
        }
        Ok(())
    }

    pub fn last_subject_token(&self) -> usize {
        self.subject_span.1
    }
}

/// Position of a token relative to the subject, used to align prompts of
/// different lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    PreSubject,
    FirstSubject,
    MidSubject,
    LastSubject,
    PostSubject,
    LastToken,
}

impl TokenRole {
    pub const ALL: [TokenRole; 6] = [
        TokenRole::PreSubject,
        TokenRole::FirstSubject,
        TokenRole::MidSubject,
        TokenRole::LastSubject,
        TokenRole::PostSubject,
        TokenRole::LastToken,
    ];

    /// Roles of every token of an `n`-token prompt with subject `[a, b]`.
    /// A one-token subject counts as its last token.
    pub fn assign(n: usize, (a, b): (usize, usize)) -> Vec<TokenRole> {
        (0..n)
            .map(|i| {
                if i < a {
                    TokenRole::PreSubject
                } else if i == b {
                    TokenRole::LastSubject
                } else if i == a {
                    TokenRole::FirstSubject
                } else if i < b {
                    TokenRole::MidSubject
                } else if i + 1 == n {
                    TokenRole::LastToken
                } else {
                    TokenRole::PostSubject
                }
            })
            .collect()
    }

    pub fn label(&self) -> &'static str {
        match self {
            TokenRole::PreSubject => "pre-subject",
            TokenRole::FirstSubject => "first-subject",
            TokenRole::MidSubject => "mid-subject",
            TokenRole::LastSubject => "last-subject",
            TokenRole::PostSubject => "post-subject",
            TokenRole::LastToken => "last-token",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenRole::*;

    #[test]
    fn roles_cover_every_position() {
        assert_eq!(
            TokenRole::assign(7, (1, 3)),
            vec![PreSubject, FirstSubject, MidSubject, LastSubject, PostSubject, PostSubject, LastToken]
        );
        assert_eq!(TokenRole::assign(3, (0, 0)), vec![LastSubject, PostSubject, LastToken]);
    }
}
