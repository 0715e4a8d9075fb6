use std::collections::HashMap;

use super::{harmonic_mean, Metric, MetricScore, TokenizedText};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram overlap. `n` must be at least 1.
pub fn rouge_n(candidate: &TokenizedText, reference: &TokenizedText, n: usize) -> MetricScore {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let cand = ngram_counts(&candidate.tokens, n);
    let refr = ngram_counts(&reference.tokens, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, c)| refr.get(gram).map_or(0, |r| (*c).min(*r)))
        .sum();
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    let precision = overlap as f64 / cand_total.max(1) as f64;
    let recall = overlap as f64 / ref_total.max(1) as f64;
    let metric = match n {
        1 => Metric::Rouge1,
        2 => Metric::Rouge2,
        n => Metric::RougeN(n),
    };
    MetricScore {
        metric,
        precision,
        recall,
        f: harmonic_mean(precision, recall),
    }
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenizedText, reference: &TokenizedText) -> MetricScore {
    if candidate.is_empty() || reference.is_empty() {
        return MetricScore {
            metric: Metric::RougeL,
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        };
    }
    let l = lcs_len(&candidate.tokens, &reference.tokens) as f64;
    let precision = l / candidate.len() as f64;
    let recall = l / reference.len() as f64;
    MetricScore {
        metric: Metric::RougeL,
        precision,
        recall,
        f: harmonic_mean(precision, recall),
    }
}
