//! METEOR with exact and stem matching stages.
//!
//! Each stage aligns the words left unmatched by earlier stages, choosing among
//! the alignments with the most matches one with the fewest chunks. The search
//! walks candidate positions left to right over states keyed by (reference
//! positions used, reference position of the previous candidate word), and is
//! exhaustive whenever the frontier stays within the beam width.

use std::collections::HashMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::{Metric, MetricScore, TokenizedText};

pub const ALPHA_WEIGHT: f64 = 9.0;
pub const PENALTY_GAMMA: f64 = 0.5;
pub const PENALTY_BETA: f64 = 3.0;
pub const DEFAULT_BEAM_WIDTH: usize = 4096;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Porter-family English stem of a lowercased token.
pub fn stem(token: &str) -> String {
    stemmer().stem(token).into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeteorAlignment {
    /// Reference position aligned to each candidate position.
    pub pairs: Vec<Option<usize>>,
    pub matches: usize,
    pub chunks: usize,
}

impl MeteorAlignment {
    pub fn score(&self, cand_len: usize, ref_len: usize) -> MetricScore {
        let zero = MetricScore {
            metric: Metric::Meteor,
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        };
        if self.matches == 0 || cand_len == 0 || ref_len == 0 {
            return zero;
        }
        let m = self.matches as f64;
        let precision = m / cand_len as f64;
        let recall = m / ref_len as f64;
        let fmean = (1.0 + ALPHA_WEIGHT) * precision * recall / (recall + ALPHA_WEIGHT * precision);
        let penalty = PENALTY_GAMMA * (self.chunks as f64 / m).powf(PENALTY_BETA);
        MetricScore {
            precision,
            recall,
            f: fmean * (1.0 - penalty),
            ..zero
        }
    }
}

/// Number of runs of consecutive candidate positions aligned to consecutive
/// reference positions.
pub(crate) fn count_chunks(pairs: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for p in pairs {
        if let Some(j) = *p {
            if !(j > 0 && prev == Some(j - 1)) {
                chunks += 1;
            }
        }
        prev = *p;
    }
    chunks
}

#[derive(Clone)]
struct State {
    used: Vec<u64>,
    prev: Option<usize>,
    chunks: usize,
    pairs: Vec<Option<usize>>,
}

impl State {
    fn is_used(&self, j: usize) -> bool {
        self.used[j / 64] & (1 << (j % 64)) != 0
    }

    fn mark(&mut self, j: usize) {
        self.used[j / 64] |= 1 << (j % 64);
    }
}

/// One matching stage. `cand_keys[i]` is the match key of a free candidate
/// position, `ref_keys[j]` that of a free reference position; `fixed` holds
/// alignments from earlier stages.
fn align_stage(
    cand_keys: &[Option<String>],
    ref_keys: &[Option<String>],
    fixed: &[Option<usize>],
    beam_width: usize,
) -> Vec<Option<usize>> {
    let n = cand_keys.len();
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, k) in ref_keys.iter().enumerate() {
        if let Some(k) = k {
            ref_positions.entry(k.as_str()).or_default().push(j);
        }
    }
    let mut cand_total: HashMap<&str, usize> = HashMap::new();
    for k in cand_keys.iter().flatten() {
        *cand_total.entry(k.as_str()).or_default() += 1;
    }
    // Free candidate occurrences of the same key after each position.
    let mut remaining_after = vec![0usize; n];
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for i in 0..n {
        if let Some(k) = &cand_keys[i] {
            let s = seen.entry(k.as_str()).or_default();
            *s += 1;
            remaining_after[i] = cand_total[k.as_str()] - *s;
        }
    }

    let words = ref_keys.len().div_ceil(64).max(1);
    let mut frontier = vec![State {
        used: vec![0; words],
        prev: None,
        chunks: 0,
        pairs: Vec::with_capacity(n),
    }];

    for i in 0..n {
        let mut next: Vec<State> = Vec::new();
        let mut index: HashMap<(Vec<u64>, Option<usize>), usize> = HashMap::new();
        let mut push = |state: State, next: &mut Vec<State>| {
            let key = (state.used.clone(), state.prev);
            match index.get(&key) {
                Some(&slot) if next[slot].chunks <= state.chunks => {}
                Some(&slot) => next[slot] = state,
                None => {
                    index.insert(key, next.len());
                    next.push(state);
                }
            }
        };
        for state in &frontier {
            let step = |s: &State, j: Option<usize>| {
                let mut s = s.clone();
                if let Some(j) = j {
                    if !(j > 0 && s.prev == Some(j - 1)) {
                        s.chunks += 1;
                    }
                }
                s.prev = j;
                s.pairs.push(j);
                s
            };
            if let Some(j) = fixed[i] {
                push(step(state, Some(j)), &mut next);
                continue;
            }
            let Some(key) = &cand_keys[i] else {
                push(step(state, None), &mut next);
                continue;
            };
            let refs = ref_positions.get(key.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            for &j in refs {
                if !state.is_used(j) {
                    let mut s = step(state, Some(j));
                    s.mark(j);
                    push(s, &mut next);
                }
            }
            let matched = refs.iter().filter(|&&j| state.is_used(j)).count();
            let required = cand_total[key.as_str()].min(refs.len());
            if matched + remaining_after[i] >= required {
                push(step(state, None), &mut next);
            }
        }
        if next.len() > beam_width {
            next.sort_by(|a, b| a.chunks.cmp(&b.chunks).then_with(|| a.pairs.cmp(&b.pairs)));
            next.truncate(beam_width);
        }
        frontier = next;
    }
    frontier
        .into_iter()
        .min_by(|a, b| a.chunks.cmp(&b.chunks).then_with(|| a.pairs.cmp(&b.pairs)))
        .map(|s| s.pairs)
        .unwrap_or_default()
}

/// Exact-match stage followed by a stem-match stage over the leftovers.
pub fn meteor_alignment(candidate: &TokenizedText, reference: &TokenizedText, beam_width: usize) -> MeteorAlignment {
    let cand = &candidate.tokens;
    let refr = &reference.tokens;
    let beam_width = beam_width.max(1);

    let exact = align_stage(
        &cand.iter().cloned().map(Some).collect::<Vec<_>>(),
        &refr.iter().cloned().map(Some).collect::<Vec<_>>(),
        &vec![None; cand.len()],
        beam_width,
    );

    let mut ref_used = vec![false; refr.len()];
    for j in exact.iter().flatten() {
        ref_used[*j] = true;
    }
    let cand_stems: Vec<Option<String>> = cand
        .iter()
        .zip(&exact)
        .map(|(t, a)| a.is_none().then(|| stem(t)))
        .collect();
    let ref_stems: Vec<Option<String>> = refr
        .iter()
        .zip(&ref_used)
        .map(|(t, used)| (!used).then(|| stem(t)))
        .collect();
    let pairs = align_stage(&cand_stems, &ref_stems, &exact, beam_width);

    let matches = pairs.iter().flatten().count();
    let chunks = count_chunks(&pairs);
    MeteorAlignment { pairs, matches, chunks }
}

/// METEOR: `Fmean = 10PR / (R + 9P)`, scaled by `1 - 0.5 (chunks/m)^3`.
pub fn meteor(candidate: &TokenizedText, reference: &TokenizedText) -> MetricScore {
    meteor_alignment(candidate, reference, DEFAULT_BEAM_WIDTH).score(candidate.len(), reference.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TokenizedText {
        TokenizedText::new(s)
    }

    #[test]
    fn identity_matches_closed_form() {
        let x = t("the cat sat on the mat");
        let a = meteor_alignment(&x, &x, DEFAULT_BEAM_WIDTH);
        assert_eq!((a.matches, a.chunks), (6, 1));
        let score = meteor(&x, &x).f;
        assert!((score - (1.0 - 0.5 / 216.0)).abs() < 1e-12);
        assert!((score - 0.99769).abs() < 1e-4);
    }

    #[test]
    fn disjoint_and_empty() {
        assert_eq!(meteor(&t("alpha beta"), &t("gamma delta")).f, 0.0);
        assert_eq!(meteor(&t(""), &t("gamma delta")).f, 0.0);
        assert_eq!(meteor(&t("a"), &t("")).f, 0.0);
    }

    #[test]
    fn reordered_words_form_two_chunks() {
        let a = meteor_alignment(&t("sat the cat"), &t("the cat sat"), DEFAULT_BEAM_WIDTH);
        assert_eq!((a.matches, a.chunks), (3, 2));
        let s = meteor(&t("sat the cat"), &t("the cat sat"));
        assert!((s.f - (1.0 - 0.5 * (2.0f64 / 3.0).powi(3))).abs() < 1e-12);
    }

    #[test]
    fn repeated_word_prefers_contiguous_alignment() {
        // A greedy left-to-right matcher would pair the first "the" with the
        // first reference "the" and split the run.
        let a = meteor_alignment(&t("on the mat"), &t("the cat sat on the mat"), DEFAULT_BEAM_WIDTH);
        assert_eq!((a.matches, a.chunks), (3, 1));
        assert_eq!(a.pairs, vec![Some(3), Some(4), Some(5)]);
    }

    #[test]
    fn stem_stage_matches_inflections() {
        let a = meteor_alignment(&t("models generated citations"), &t("model generates citation"), 64);
        assert_eq!((a.matches, a.chunks), (3, 1));
        let exact_first = meteor_alignment(&t("running run"), &t("run runs"), 64);
        // "run" matches exactly first; "running"/"runs" then share the stem "run".
        assert_eq!(exact_first.pairs, vec![Some(1), Some(0)]);
        assert_eq!(exact_first.chunks, 2);
    }

    #[test]
    fn stems_are_stable() {
        let golden = [
            ("citations", "citat"),
            ("generating", "generat"),
            ("networks", "network"),
            ("relational", "relat"),
            ("studies", "studi"),
            ("the", "the"),
        ];
        for (word, expected) in golden {
            assert_eq!(stem(word), expected, "{word}");
        }
    }
}
