use std::collections::{BTreeMap, HashSet};

use citegen_core::corpus::{sentence_bounds, sentence_split, BodySection, CiteSpan, CorpusFilter, PaperRecord};
use citegen_core::dataset::{
    compute_stats, extract_samples, split_dataset, CitationSample, ExtractOptions, PaperLookup, SplitSpec, TargetPaper,
};
use citegen_core::kg::{
    attach_triplets, load_triplets, render_triplets, write_triplets, KgTriplet, LoadOptions, Section, TripletMap,
    TripletSet,
};
use citegen_core::metrics::{lcs_len, meteor, meteor_alignment, rouge_l, rouge_n, TokenizedText, DEFAULT_BEAM_WIDTH};
use citegen_core::numerics::{
    build_quantile_map, dequantize_block, optimizer_step, quantize_block, AdamConfig, MomentumRule, OptimizerState,
};
use citegen_core::prompt::{render_baseline, render_kg, PromptOptions, TokenBudget};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

// ---------- corpus ----------

fn sentence_text() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec!["Graph", "model", "e.g.", "[1]", "data", "We", "it", "3.5", "Né"]);
    let end = prop::sample::select(vec![".", "!", "?", "...", ""]);
    let gap = prop::sample::select(vec![" ", "  ", "\n", "\t "]);
    prop::collection::vec((prop::collection::vec(word, 1..6), end, gap), 1..6).prop_map(|parts| {
        parts
            .into_iter()
            .map(|(ws, end, gap)| format!("{}{end}{gap}", ws.join(" ")))
            .collect()
    })
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn sentences_cover_the_text(text in sentence_text()) {
        let chars: Vec<char> = text.chars().collect();
        let bounds = sentence_bounds(&text);
        let mut cursor = 0;
        for r in &bounds {
            prop_assert!(r.start >= cursor && r.start < r.end);
            prop_assert!(chars[cursor..r.start].iter().all(|c| c.is_whitespace()));
            prop_assert!(!chars[r.start].is_whitespace() && !chars[r.end - 1].is_whitespace());
            cursor = r.end;
        }
        prop_assert!(chars[cursor..].iter().all(|c| c.is_whitespace()));
        let squeeze = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(squeeze(&sentence_split(&text).join(" ")), squeeze(&text));
    }

    #[test]
    fn filter_soundness(fields in prop::collection::vec(prop::sample::select(vec!["Computer Science", "Biology", "Physics", "computer science"]), 0..3)) {
        let record = PaperRecord {
            paper_id: "p".into(),
            title: None,
            abstract_text: None,
            fields_of_study: fields.iter().map(|s| s.to_string()).collect(),
            body_sections: vec![],
        };
        let filter = CorpusFilter::default();
        prop_assert_eq!(filter.accepts(&record), fields.contains(&"Computer Science"));
    }
}

// ---------- dataset ----------

/// A random citation graph over `n` papers; the sentence structure and the
/// cited ids are drawn per paper.
fn corpus_strategy() -> impl Strategy<Value = Vec<PaperRecord>> {
    let n = 8usize;
    let sentence = prop::collection::vec(prop::option::weighted(0.9, 0..n + 2), 0..4);
    let section = prop::collection::vec(sentence, 1..6);
    let paper = (
        prop::collection::vec(section, 1..3),
        any::<bool>(),
        prop::bool::weighted(0.8),
    );
    prop::collection::vec(paper, n).prop_map(move |papers| {
        papers
            .into_iter()
            .enumerate()
            .map(|(p, (sections, intro, has_abstract))| PaperRecord {
                paper_id: format!("p{p}"),
                title: Some(format!("Paper {p}")),
                abstract_text: has_abstract.then(|| format!("Abstract of paper {p} é.")),
                fields_of_study: vec!["Computer Science".into()],
                body_sections: sections
                    .into_iter()
                    .enumerate()
                    .map(|(k, sentences)| {
                        let mut cite_spans = Vec::new();
                        let texts = sentences
                            .iter()
                            .enumerate()
                            .map(|(i, cites)| {
                                let mut text = format!("Sentence {i} of section {k}");
                                for c in cites {
                                    let start = text.chars().count() + 1;
                                    text.push_str(" [x]");
                                    cite_spans.push(CiteSpan {
                                        sentence_index: i,
                                        char_start: start,
                                        char_end: start + 3,
                                        resolved_paper_id: c.map(|c| format!("p{c}")),
                                    });
                                }
                                text.push('.');
                                text
                            })
                            .collect();
                        BodySection {
                            section_name: if intro && k == 0 {
                                "Introduction".into()
                            } else {
                                format!("Section {k}")
                            },
                            sentences: texts,
                            cite_spans,
                        }
                    })
                    .collect(),
            })
            .collect()
    })
}

fn lookup_of(records: &[PaperRecord]) -> PaperLookup {
    records.iter().filter_map(TargetPaper::from_record).collect()
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn extracted_samples_satisfy_invariants(records in corpus_strategy(), cap in prop::option::of(1usize..3)) {
        let lookup = lookup_of(&records);
        let options = ExtractOptions { max_samples_per_source: cap };
        let (samples, stats) = extract_samples(records.iter().cloned(), &lookup, options);
        prop_assert_eq!(stats.samples, samples.len());
        let mut ids = HashSet::new();
        for s in &samples {
            prop_assert!(s.check().is_ok(), "{:?}", s.check());
            prop_assert!(ids.insert(s.sample_id.clone()));
            prop_assert!(s.targets.iter().all(|t| lookup.get(&t.paper_id).is_some()));
        }
        if let Some(cap) = cap {
            let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
            for s in &samples {
                *per_source.entry(&s.source_paper_id).or_default() += 1;
            }
            prop_assert!(per_source.values().all(|&c| c <= cap));
        }
        let (again, _) = extract_samples(records.iter().cloned(), &lookup, options);
        prop_assert_eq!(serde_json::to_string(&samples).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn stats_average_lies_between_extremes(records in corpus_strategy()) {
        let lookup = lookup_of(&records);
        let (samples, _) = extract_samples(records.into_iter(), &lookup, ExtractOptions::default());
        let stats = compute_stats(&samples);
        prop_assert_eq!(stats.empty, samples.is_empty());
        if !samples.is_empty() {
            let lens: Vec<usize> = samples.iter().map(|s| s.citation_text.chars().count()).collect();
            let min = *lens.iter().min().unwrap() as f64;
            prop_assert!(stats.citation_chars.avg >= min - 1e-9);
            prop_assert!(stats.citation_chars.avg <= stats.citation_chars.max as f64 + 1e-9);
            let tl: Vec<usize> = samples.iter().flat_map(|s| s.targets.iter().map(|t| t.abstract_text.chars().count())).collect();
            prop_assert!(stats.target_abstract_chars.avg >= *tl.iter().min().unwrap() as f64 - 1e-9);
            prop_assert!(stats.target_abstract_chars.avg <= stats.target_abstract_chars.max as f64 + 1e-9);
            prop_assert!((2.0..=3.0).contains(&stats.avg_targets_per_sample));
        }
    }
}

fn dummy_sample(i: usize) -> CitationSample {
    let target = |k: usize| TargetPaper {
        paper_id: format!("t{i}-{k}"),
        title: String::new(),
        abstract_text: format!("target {k} of {i}"),
        introduction: None,
        conclusion: None,
    };
    CitationSample {
        sample_id: format!("s{i}"),
        source_paper_id: format!("p{}", i % 7),
        source_abstract: "src".into(),
        targets: vec![target(0), target(1)],
        citation_text: format!("citation {i}"),
        section_name: "Intro".into(),
    }
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn split_is_a_partition(n in 0usize..400, seed in any::<u64>(), a in 1u32..20, b in 1u32..20, c in 1u32..20) {
        let total = f64::from(a + b + c);
        let spec = SplitSpec {
            train_fraction: f64::from(a) / total,
            val_fraction: f64::from(b) / total,
            test_fraction: 1.0 - f64::from(a) / total - f64::from(b) / total,
            seed,
        };
        let samples: Vec<CitationSample> = (0..n).map(dummy_sample).collect();
        let splits = split_dataset(&samples, &spec).unwrap();
        let mut seen: Vec<String> = splits.train.iter().chain(&splits.val).chain(&splits.test).map(|s| s.sample_id.clone()).collect();
        prop_assert_eq!(seen.len(), n);
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!([splits.train.len(), splits.val.len(), splits.test.len()], spec.sizes(n));
        let again = split_dataset(&samples, &spec).unwrap();
        prop_assert_eq!(again.train, splits.train);
    }
}

// ---------- knowledge graph ----------

fn triplet() -> impl Strategy<Value = KgTriplet> {
    let mention = "[A-Za-z][A-Za-z ]{0,8}[a-z]";
    (
        mention,
        prop::sample::select(vec!["Used-For", "Part-Of", "Compare"]),
        mention,
    )
        .prop_filter_map("head equals tail", |(head, relation, tail)| {
            KgTriplet {
                head,
                relation: relation.into(),
                tail,
                head_type: None,
                tail_type: Some("Task".into()),
            }
            .normalized()
        })
}

fn triplet_map() -> impl Strategy<Value = TripletMap> {
    prop::collection::btree_map(
        "p[0-9]",
        prop::collection::btree_map(0usize..3, prop::collection::vec(triplet(), 0..5), 1..3),
        0..5,
    )
    .prop_map(|papers| {
        papers
            .into_iter()
            .map(|(id, sections)| {
                let sets = sections
                    .into_iter()
                    .map(|(k, triplets)| {
                        let mut seen = HashSet::new();
                        let triplets = triplets
                            .into_iter()
                            .filter(|t| seen.insert((t.head.clone(), t.relation.clone(), t.tail.clone())))
                            .collect();
                        TripletSet {
                            paper_id: id.clone(),
                            section: Section::ALL[k],
                            triplets,
                        }
                    })
                    .collect();
                (id, sets)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn triplet_files_round_trip(map in triplet_map()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kg.jsonl");
        write_triplets(&map, &path).unwrap();
        let (loaded, stats) = load_triplets(&path, &LoadOptions::default()).unwrap();
        prop_assert_eq!(loaded, map);
        prop_assert_eq!(stats.duplicate_triplets + stats.invalid_triplets + stats.malformed_lines, 0);
    }

    #[test]
    fn rendered_triplets_grow_with_budget(triplets in prop::collection::vec(triplet(), 0..8)) {
        let set = TripletSet { paper_id: "p".into(), section: Section::Abstract, triplets };
        let lens: Vec<usize> = (0..10).map(|b| render_triplets(&set, b).chars().count()).collect();
        prop_assert!(lens.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn attach_keeps_count_and_order(map in triplet_map(), n in 0usize..12) {
        let samples: Vec<CitationSample> = (0..n).map(dummy_sample).collect();
        let (enriched, stats) = attach_triplets(samples.clone(), &map);
        prop_assert_eq!(stats.samples, n);
        let ids: Vec<&str> = enriched.iter().map(|e| e.sample.sample_id.as_str()).collect();
        let expected: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
        prop_assert_eq!(ids, expected);
    }
}

// ---------- prompts ----------

fn prompt_sample() -> impl Strategy<Value = CitationSample> {
    let text = |max: usize| prop::string::string_regex(&format!("[a-zA-Z é.]{{1,{max}}}")).unwrap();
    (
        text(3000),
        prop::collection::vec(
            (text(2500), prop::option::of(text(800)), prop::option::of(text(800))),
            2..=3,
        ),
        text(400),
    )
        .prop_map(|(source, targets, citation)| CitationSample {
            sample_id: "s".into(),
            source_paper_id: "src".into(),
            source_abstract: source,
            targets: targets
                .into_iter()
                .enumerate()
                .map(|(k, (abs, intro, concl))| TargetPaper {
                    paper_id: format!("t{k}"),
                    title: String::new(),
                    abstract_text: abs,
                    introduction: intro,
                    conclusion: concl,
                })
                .collect(),
            citation_text: citation,
            section_name: "Intro".into(),
        })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn prompts_respect_the_budget(
        sample in prompt_sample(),
        map in triplet_map(),
        max in 256usize..2600,
        intro in any::<bool>(),
        tb in 0usize..20,
    ) {
        let options = PromptOptions { include_introduction_text: intro, include_conclusion_text: intro, ..PromptOptions::default() };
        let budget = TokenBudget::new(max);
        let base = render_baseline(&sample, &budget, &options).unwrap();
        prop_assert!(base.token_estimate <= budget.prompt_limit());
        let (enriched, _) = attach_triplets(vec![sample.clone()], &map);
        let kg = render_kg(&enriched[0], &budget, tb, &options).unwrap();
        prop_assert!(kg.token_estimate <= budget.prompt_limit());
        prop_assert_eq!(render_kg(&enriched[0], &budget, tb, &options).unwrap(), kg);
    }

    #[test]
    fn kg_without_relations_is_the_baseline(sample in prompt_sample(), map in triplet_map(), max in 256usize..4000) {
        let options = PromptOptions { show_empty_kg_blocks: false, ..PromptOptions::default() };
        let budget = TokenBudget::new(max);
        let (enriched, _) = attach_triplets(vec![sample.clone()], &map);
        let kg = render_kg(&enriched[0], &budget, 0, &options).unwrap();
        let base = render_baseline(&sample, &budget, &options).unwrap();
        prop_assert_eq!(kg.text, base.text);
        prop_assert_eq!(kg.truncations, base.truncations);
    }
}

// ---------- metrics ----------

fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from),
        0..=max,
    )
}

fn brute_force_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = sub.len();
        }
    }
    best
}

fn clipped_overlap(c: &[String], r: &[String], n: usize) -> usize {
    let grams = |t: &[String]| -> BTreeMap<Vec<String>, usize> {
        let mut m = BTreeMap::new();
        if t.len() >= n {
            for w in t.windows(n) {
                *m.entry(w.to_vec()).or_default() += 1;
            }
        }
        m
    };
    let rc = grams(r);
    grams(c).iter().map(|(g, k)| (*k).min(*rc.get(g).unwrap_or(&0))).sum()
}

/// Best (matches, chunks) over every one-to-one alignment of equal tokens.
fn brute_force_alignment(c: &[String], r: &[String]) -> (usize, usize) {
    fn go(
        i: usize,
        c: &[String],
        r: &[String],
        used: &mut Vec<bool>,
        pairs: &mut Vec<Option<usize>>,
        best: &mut (usize, usize),
    ) {
        if i == c.len() {
            let m = pairs.iter().flatten().count();
            let mut chunks = 0;
            let mut prev: Option<usize> = None;
            for p in pairs.iter() {
                if let Some(j) = *p {
                    if !(j > 0 && prev == Some(j - 1)) {
                        chunks += 1;
                    }
                }
                prev = *p;
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        pairs.push(None);
        go(i + 1, c, r, used, pairs, best);
        pairs.pop();
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push(Some(j));
                go(i + 1, c, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    best
}

proptest! {
    #![proptest_config(config(300))]

    #[test]
    fn rouge_matches_oracles(c in tokens(10), r in tokens(10)) {
        prop_assert_eq!(lcs_len(&c, &r), brute_force_lcs(&c, &r));
        let (ct, rt) = (TokenizedText::from_tokens(&c), TokenizedText::from_tokens(&r));
        for n in 1..=2 {
            let s = rouge_n(&ct, &rt, n);
            let overlap = clipped_overlap(&c, &r, n) as f64;
            prop_assert_eq!(s.precision, overlap / c.len().saturating_sub(n - 1).max(1) as f64);
            prop_assert_eq!(s.recall, overlap / r.len().saturating_sub(n - 1).max(1) as f64);
        }
    }

    #[test]
    fn meteor_alignment_is_optimal(c in tokens(7), r in tokens(7)) {
        let a = meteor_alignment(&TokenizedText::from_tokens(&c), &TokenizedText::from_tokens(&r), DEFAULT_BEAM_WIDTH);
        prop_assert_eq!((a.matches, a.chunks), brute_force_alignment(&c, &r));
    }

    #[test]
    fn scores_stay_in_unit_range(c in "[a-z ]{0,60}", r in "[a-z ]{0,60}") {
        let (ct, rt) = (TokenizedText::new(&c), TokenizedText::new(&r));
        for s in [meteor(&ct, &rt), rouge_n(&ct, &rt, 1), rouge_n(&ct, &rt, 2), rouge_l(&ct, &rt)] {
            for v in [s.precision, s.recall, s.f] {
                prop_assert!((0.0..=1.0).contains(&v), "{:?}", s);
            }
        }
    }

    #[test]
    fn rouge1_ignores_order(mut c in tokens(10), r in tokens(10), seed in any::<u64>()) {
        let before = rouge_n(&TokenizedText::from_tokens(&c), &TokenizedText::from_tokens(&r), 1);
        let k = c.len().max(1);
        c.rotate_left((seed as usize) % k);
        let after = rouge_n(&TokenizedText::from_tokens(&c), &TokenizedText::from_tokens(&r), 1);
        prop_assert_eq!(before, after);
    }
}

// ---------- numerics ----------

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn quantization_error_is_bounded(values in prop::collection::vec(-100.0f64..100.0, 1..200), block in 1usize..80) {
        let map = build_quantile_map(4).unwrap();
        let half_gap = map.max_gap() / 2.0;
        let q = quantize_block(&values, &map, block).unwrap();
        let restored = dequantize_block(&q);
        prop_assert_eq!(restored.len(), values.len());
        for (i, (x, y)) in values.iter().zip(&restored).enumerate() {
            let scale = q.scales[i / block];
            prop_assert!((x - y).abs() <= scale * half_gap + 1e-12 * scale.max(1.0));
        }
        let twice = dequantize_block(&quantize_block(&restored, &map, block).unwrap());
        for (a, b) in restored.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn first_step_descends(
        w in prop::collection::vec(-10.0f64..10.0, 1..8),
        g_seed in prop::collection::vec(-5.0f64..5.0, 8),
        lr in 1e-5f64..1.0,
        standard in any::<bool>(),
    ) {
        let cfg = AdamConfig {
            rule: if standard { MomentumRule::StandardAdam } else { MomentumRule::PaperAdam },
            ..AdamConfig::default()
        };
        let state = OptimizerState::new(w.clone(), cfg).unwrap();
        let g = &g_seed[..w.len()];
        let next = optimizer_step(&state, g, lr).unwrap();
        for ((after, before), grad) in next.weights.iter().zip(&w).zip(g) {
            prop_assert!((after - before) * grad <= 0.0);
        }
        prop_assert!(next.v.iter().all(|v| *v >= 0.0));
    }
}
