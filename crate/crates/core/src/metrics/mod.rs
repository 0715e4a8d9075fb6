//! Summarization metrics used to score generated citation text.

mod meteor;
mod report;
mod rouge;

use serde::{Deserialize, Serialize};

pub use meteor::{meteor, meteor_alignment, stem, MeteorAlignment, DEFAULT_BEAM_WIDTH};
pub use report::{evaluate_corpus, render_results_table, CorpusScores, EvalPair, EvalReport, SampleScores, COLUMNS};
pub use rouge::{lcs_len, rouge_l, rouge_n};

/// Lowercased alphanumeric tokens of a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub source: String,
}

impl TokenizedText {
    pub fn new(source: &str) -> Self {
        let tokens = source
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        TokenizedText {
            tokens,
            source: source.to_string(),
        }
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        TokenizedText {
            source: tokens.join(" "),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "METEOR")]
    Meteor,
    #[serde(rename = "ROUGE1")]
    Rouge1,
    #[serde(rename = "ROUGE2")]
    Rouge2,
    #[serde(rename = "ROUGEL")]
    RougeL,
    /// Higher-order ROUGE-N; not part of the standard report.
    #[serde(rename = "ROUGEN")]
    RougeN(usize),
}

/// Precision, recall and the metric's final score. For METEOR `f` is the
/// penalized score rather than a plain F-measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub(crate) fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
