use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{meteor, rouge_l, rouge_n, MetricScore, TokenizedText};
use crate::error::{Error, Result};

/// Column names of the results tables.
pub const COLUMNS: [&str; 4] = ["METEOR", "Rouge-1", "Rouge-2", "Rouge-L"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub sample_id: String,
    pub candidate: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub meteor: MetricScore,
    pub rouge1: MetricScore,
    pub rouge2: MetricScore,
    pub rouge_l: MetricScore,
}

impl SampleScores {
    pub fn score(sample_id: &str, candidate: &str, reference: &str) -> Self {
        let cand = TokenizedText::new(candidate);
        let refr = TokenizedText::new(reference);
        SampleScores {
            sample_id: sample_id.to_string(),
            meteor: meteor(&cand, &refr),
            rouge1: rouge_n(&cand, &refr, 1),
            rouge2: rouge_n(&cand, &refr, 2),
            rouge_l: rouge_l(&cand, &refr),
        }
    }
}

/// Corpus means of the per-sample scores, times 100, rounded to 2 decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    #[serde(rename = "METEOR")]
    pub meteor: f64,
    #[serde(rename = "Rouge-1")]
    pub rouge1: f64,
    #[serde(rename = "Rouge-2")]
    pub rouge2: f64,
    #[serde(rename = "Rouge-L")]
    pub rouge_l: f64,
}

impl CorpusScores {
    pub fn values(&self) -> [f64; 4] {
        [self.meteor, self.rouge1, self.rouge2, self.rouge_l]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub columns: Vec<String>,
    pub n_pairs: usize,
    pub corpus: CorpusScores,
    pub per_sample: Vec<SampleScores>,
}

fn percent(sum: f64, n: usize) -> f64 {
    (sum / n as f64 * 100.0 * 100.0).round() / 100.0
}

pub fn evaluate_corpus(label: &str, pairs: &[EvalPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let per_sample: Vec<SampleScores> = pairs
        .par_iter()
        .map(|p| SampleScores::score(&p.sample_id, &p.candidate, &p.reference))
        .collect();
    let n = per_sample.len();
    let sum = |f: fn(&SampleScores) -> f64| per_sample.iter().map(f).sum::<f64>();
    let corpus = CorpusScores {
        meteor: percent(sum(|s| s.meteor.f), n),
        rouge1: percent(sum(|s| s.rouge1.f), n),
        rouge2: percent(sum(|s| s.rouge2.f), n),
        rouge_l: percent(sum(|s| s.rouge_l.f), n),
    };
    Ok(EvalReport {
        label: label.to_string(),
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        n_pairs: n,
        corpus,
        per_sample,
    })
}

/// One row per labelled result, columns `Model | METEOR | Rouge-1 | Rouge-2 | Rouge-L`.
pub fn render_results_table(rows: &[(String, CorpusScores)]) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let widths: Vec<usize> = COLUMNS.iter().map(|c| c.len().max(6)).collect();
    let mut out = format!("{:<label_width$}", "Model");
    for (c, w) in COLUMNS.iter().zip(&widths) {
        out.push_str(&format!(" | {c:>w$}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width + widths.iter().map(|w| w + 3).sum::<usize>()));
    out.push('\n');
    for (label, scores) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for (v, w) in scores.values().iter().zip(&widths) {
            out.push_str(&format!(" | {:>w$}", format!("{v:.2}")));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, c: &str, r: &str) -> EvalPair {
        EvalPair {
            sample_id: id.into(),
            candidate: c.into(),
            reference: r.into(),
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(evaluate_corpus("m", &[]), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn identical_pair_scores_100() {
        let r = evaluate_corpus("m", &[pair("a", "graph models cite work", "graph models cite work")]).unwrap();
        assert_eq!(r.corpus.rouge1, 100.0);
        assert_eq!(r.corpus.rouge2, 100.0);
        assert_eq!(r.corpus.rouge_l, 100.0);
        assert_eq!(r.columns, COLUMNS);
    }

    #[test]
    fn corpus_mean() {
        let r = evaluate_corpus("m", &[pair("a", "x y", "x y"), pair("b", "p q", "r s")]).unwrap();
        assert_eq!(r.corpus.rouge1, 50.0);
        assert_eq!(r.per_sample[1].sample_id, "b");
    }
}
