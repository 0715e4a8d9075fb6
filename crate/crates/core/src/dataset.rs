//! Multi-reference citation samples: extraction from a corpus, seeded splits,
//! character statistics, and the JSONL dataset file.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BodySection, PaperRecord};
use crate::error::{Error, Result};
use crate::jsonl::{self, Manifest};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const MIN_TARGETS: usize = 2;
pub const MAX_TARGETS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetPaper {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub introduction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conclusion: Option<String>,
}

impl TargetPaper {
    /// Builds target metadata from a corpus record; `None` when the record
    /// has no usable abstract.
    pub fn from_record(record: &PaperRecord) -> Option<Self> {
        let abstract_text = record.abstract_text.as_deref()?.trim();
        if abstract_text.is_empty() {
            return None;
        }
        Some(TargetPaper {
            paper_id: record.paper_id.clone(),
            title: record.title.clone().unwrap_or_default(),
            abstract_text: abstract_text.to_string(),
            introduction: section_text(&record.body_sections, "introduction"),
            conclusion: section_text(&record.body_sections, "conclusion"),
        })
    }
}

fn section_text(sections: &[BodySection], needle: &str) -> Option<String> {
    let parts: Vec<String> = sections
        .iter()
        .filter(|s| s.section_name.to_lowercase().contains(needle))
        .map(BodySection::text)
        .filter(|t| !t.is_empty())
        .collect();
    (!parts.is_empty()).then(|| parts.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationSample {
    pub sample_id: String,
    pub source_paper_id: String,
    pub source_abstract: String,
    pub targets: Vec<TargetPaper>,
    pub citation_text: String,
    pub section_name: String,
}

impl CitationSample {
    /// Returns the first violated sample invariant, if any.
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(MIN_TARGETS..=MAX_TARGETS).contains(&self.targets.len()) {
            return Err(format!("{} targets", self.targets.len()));
        }
        if self.citation_text.trim().is_empty() {
            return Err("empty citation_text".into());
        }
        if self.source_abstract.trim().is_empty() {
            return Err("empty source_abstract".into());
        }
        let mut seen = HashSet::new();
        for t in &self.targets {
            if t.paper_id == self.source_paper_id {
                return Err(format!("target {} is the source paper", t.paper_id));
            }
            if !seen.insert(t.paper_id.as_str()) {
                return Err(format!("duplicate target {}", t.paper_id));
            }
            if t.abstract_text.trim().is_empty() {
                return Err(format!("target {} has no abstract", t.paper_id));
            }
        }
        Ok(())
    }
}

/// Metadata for cited papers, keyed by paper id.
#[derive(Debug, Clone, Default)]
pub struct PaperLookup {
    papers: HashMap<String, TargetPaper>,
}

impl PaperLookup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, paper: TargetPaper) {
        self.papers.insert(paper.paper_id.clone(), paper);
    }

    pub fn get(&self, paper_id: &str) -> Option<&TargetPaper> {
        self.papers.get(paper_id)
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    /// Keeps the records listed in `wanted` (every record when `wanted` is
    /// `None`) that carry an abstract.
    pub fn collect<I>(records: I, wanted: Option<&HashSet<String>>) -> Result<Self>
    where
        I: IntoIterator<Item = Result<PaperRecord>>,
    {
        let mut lookup = PaperLookup::new();
        for record in records {
            let record = record?;
            if wanted.is_some_and(|w| !w.contains(&record.paper_id)) {
                continue;
            }
            if let Some(target) = TargetPaper::from_record(&record) {
                lookup.insert(target);
            }
        }
        Ok(lookup)
    }
}

impl FromIterator<TargetPaper> for PaperLookup {
    fn from_iter<T: IntoIterator<Item = TargetPaper>>(iter: T) -> Self {
        let mut lookup = PaperLookup::new();
        for paper in iter {
            lookup.insert(paper);
        }
        lookup
    }
}

/// Every paper id cited (with a resolved id) anywhere in `record`.
pub fn cited_ids(record: &PaperRecord) -> impl Iterator<Item = &str> {
    record
        .body_sections
        .iter()
        .flat_map(|s| s.cite_spans.iter())
        .filter_map(|s| s.resolved_paper_id.as_deref())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub max_samples_per_source: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub records: usize,
    pub sentences: usize,
    pub samples: usize,
    pub unresolved_citations: usize,
    pub self_citations: usize,
    pub missing_target_abstract: usize,
    pub missing_source_abstract: usize,
    pub trimmed: usize,
    pub capped_per_source: usize,
}

struct SentenceCites {
    /// Resolved, distinct, non-self cited ids in citation order.
    resolved: Vec<String>,
    /// Subset of `resolved` whose targets exist with abstracts.
    usable: Vec<String>,
    has_unresolved: bool,
    has_spans: bool,
}

fn sentence_cites(
    section: &BodySection,
    index: usize,
    source_id: &str,
    lookup: &PaperLookup,
    stats: &mut ExtractStats,
) -> SentenceCites {
    let mut resolved: Vec<String> = Vec::new();
    let mut has_unresolved = false;
    let mut has_spans = false;
    for span in section.spans_in(index) {
        has_spans = true;
        match span.resolved_paper_id.as_deref() {
            None => {
                has_unresolved = true;
                stats.unresolved_citations += 1;
            }
            Some(id) if id == source_id => stats.self_citations += 1,
            Some(id) => {
                if !resolved.iter().any(|r| r == id) {
                    resolved.push(id.to_string());
                }
            }
        }
    }
    let usable = resolved
        .iter()
        .filter(|id| {
            let ok = lookup.get(id).is_some();
            if !ok {
                stats.missing_target_abstract += 1;
            }
            ok
        })
        .cloned()
        .collect();
    SentenceCites {
        resolved,
        usable,
        has_unresolved,
        has_spans,
    }
}

/// Whether a neighbouring sentence may join a citation passage: it must cite
/// something, every citation must be resolved, and every cited paper must be
/// one of the passage's targets.
fn extends_passage(cites: &SentenceCites, targets: &[String]) -> bool {
    cites.has_spans
        && !cites.has_unresolved
        && !cites.resolved.is_empty()
        && cites.resolved.iter().all(|id| targets.contains(id))
}

/// Emits one sample per sentence that cites at least two distinct papers with
/// known abstracts. The citation passage grows over adjacent sentences of the
/// same paragraph that cite only the sample's targets; sentences absorbed
/// into a passage do not start another sample.
pub fn extract_samples<I>(
    records: I,
    lookup: &PaperLookup,
    options: ExtractOptions,
) -> (Vec<CitationSample>, ExtractStats)
where
    I: IntoIterator<Item = PaperRecord>,
{
    let mut stats = ExtractStats::default();
    let mut samples = Vec::new();
    for record in records {
        stats.records += 1;
        let source_abstract = record.abstract_text.as_deref().map(str::trim).unwrap_or_default();
        let mut emitted_for_source = 0usize;
        for (section_index, section) in record.body_sections.iter().enumerate() {
            let n = section.sentences.len();
            stats.sentences += n;
            let cites: Vec<SentenceCites> = (0..n)
                .map(|i| sentence_cites(section, i, &record.paper_id, lookup, &mut stats))
                .collect();
            let mut consumed = vec![false; n];
            let mut i = 0;
            while i < n {
                if consumed[i] || cites[i].usable.len() < MIN_TARGETS {
                    i += 1;
                    continue;
                }
                if source_abstract.is_empty() {
                    stats.missing_source_abstract += 1;
                    i += 1;
                    continue;
                }
                let mut target_ids = cites[i].usable.clone();
                if target_ids.len() > MAX_TARGETS {
                    target_ids.truncate(MAX_TARGETS);
                    stats.trimmed += 1;
                }
                let mut lo = i;
                while lo > 0 && !consumed[lo - 1] && extends_passage(&cites[lo - 1], &target_ids) {
                    lo -= 1;
                }
                let mut hi = i;
                while hi + 1 < n && extends_passage(&cites[hi + 1], &target_ids) {
                    hi += 1;
                }
                consumed[lo..=hi].iter_mut().for_each(|c| *c = true);

                if options
                    .max_samples_per_source
                    .is_some_and(|cap| emitted_for_source >= cap)
                {
                    stats.capped_per_source += 1;
                    i = hi + 1;
                    continue;
                }
                let targets = target_ids
                    .iter()
                    .map(|id| lookup.get(id).expect("usable ids are in the lookup").clone())
                    .collect();
                samples.push(CitationSample {
                    sample_id: format!("{}#{}.{}", record.paper_id, section_index, i),
                    source_paper_id: record.paper_id.clone(),
                    source_abstract: source_abstract.to_string(),
                    targets,
                    citation_text: section.sentences[lo..=hi].join(" "),
                    section_name: section.section_name.clone(),
                });
                emitted_for_source += 1;
                stats.samples += 1;
                i = hi + 1;
            }
        }
    }
    (samples, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    /// Proportions that reproduce the 13,779 / 1,716 / 1,715 split of
    /// 17,210 samples.
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8006,
            val_fraction: 0.0997,
            test_fraction: 0.0997,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::InvalidSplit(format!(
                "fractions must be positive, got {fractions:?}"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` items: floor of each share, then the leftover items
    /// go one at a time to train, validation, test, in that order.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        let mut sizes = fractions.map(|f| ((n as f64) * f + 1e-9).floor() as usize);
        while sizes.iter().sum::<usize>() > n {
            let last = sizes.iter().rposition(|s| *s > 0).expect("sum > n > 0");
            sizes[last] -= 1;
        }
        let mut slot = 0;
        while sizes.iter().sum::<usize>() < n {
            sizes[slot % 3] += 1;
            slot += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<CitationSample>,
    pub val: Vec<CitationSample>,
    pub test: Vec<CitationSample>,
}

/// Assigns samples to splits through a seeded permutation. Each split keeps
/// the input order of its members.
pub fn split_dataset(samples: &[CitationSample], spec: &SplitSpec) -> Result<Splits> {
    let assignment = split_assignment(samples.len(), spec)?;
    let mut splits = Splits::default();
    for (sample, part) in samples.iter().zip(assignment) {
        match part {
            0 => splits.train.push(sample.clone()),
            1 => splits.val.push(sample.clone()),
            _ => splits.test.push(sample.clone()),
        }
    }
    Ok(splits)
}

/// Split index (0 train, 1 validation, 2 test) for each of `n` items.
pub fn split_assignment(n: usize, spec: &SplitSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let [train, val, _] = spec.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![2u8; n];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = if rank < train {
            0
        } else if rank < train + val {
            1
        } else {
            2
        };
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CharStat {
    pub avg: f64,
    pub max: usize,
}

impl CharStat {
    fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut count = 0usize;
        let mut total = 0u128;
        let mut max = 0usize;
        for len in lengths {
            count += 1;
            total += len as u128;
            max = max.max(len);
        }
        if count == 0 {
            return CharStat::default();
        }
        CharStat {
            avg: total as f64 / count as f64,
            max,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_unique_source_papers: usize,
    pub citation_chars: CharStat,
    pub source_abstract_chars: CharStat,
    pub target_abstract_chars: CharStat,
    pub avg_targets_per_sample: f64,
    pub empty: bool,
}

fn chars(s: &str) -> usize {
    s.chars().count()
}

pub fn compute_stats(samples: &[CitationSample]) -> DatasetStats {
    if samples.is_empty() {
        return DatasetStats {
            empty: true,
            ..DatasetStats::default()
        };
    }
    let sources: BTreeSet<&str> = samples.iter().map(|s| s.source_paper_id.as_str()).collect();
    let n_targets: usize = samples.iter().map(|s| s.targets.len()).sum();
    DatasetStats {
        n_samples: samples.len(),
        n_unique_source_papers: sources.len(),
        citation_chars: CharStat::from_lengths(samples.iter().map(|s| chars(&s.citation_text))),
        source_abstract_chars: CharStat::from_lengths(samples.iter().map(|s| chars(&s.source_abstract))),
        target_abstract_chars: CharStat::from_lengths(
            samples
                .iter()
                .flat_map(|s| s.targets.iter())
                .map(|t| chars(&t.abstract_text)),
        ),
        avg_targets_per_sample: n_targets as f64 / samples.len() as f64,
        empty: false,
    }
}

/// Aligned statistics table, one column per named dataset, using the row
/// labels of the published dataset table.
pub fn render_stats_table(columns: &[(String, DatasetStats)]) -> String {
    enum Row {
        Value(&'static str, fn(&DatasetStats) -> String),
        Heading(&'static str),
    }
    let rows: Vec<Row> = vec![
        Row::Value("# citations", |s| s.n_samples.to_string()),
        Row::Value("# unique papers", |s| s.n_unique_source_papers.to_string()),
        Row::Heading("CITATIONS"),
        Row::Value("Avg # characters", |s| format!("{:.2}", s.citation_chars.avg)),
        Row::Value("Max # characters", |s| s.citation_chars.max.to_string()),
        Row::Heading("SOURCE ABSTRACTS"),
        Row::Value("Avg # characters", |s| format!("{:.2}", s.source_abstract_chars.avg)),
        Row::Value("Max # characters", |s| s.source_abstract_chars.max.to_string()),
        Row::Heading("TARGET ABSTRACTS"),
        Row::Value("Avg # characters", |s| format!("{:.2}", s.target_abstract_chars.avg)),
        Row::Value("Max # characters", |s| s.target_abstract_chars.max.to_string()),
        Row::Value("Avg # of Targets per sample", |s| {
            format!("{:.2}", s.avg_targets_per_sample)
        }),
    ];

    let label_width = rows
        .iter()
        .map(|r| match r {
            Row::Value(l, _) | Row::Heading(l) => l.len(),
        })
        .chain(std::iter::once("Statistic".len()))
        .max()
        .unwrap_or(0);
    let cells: Vec<Vec<String>> = columns
        .iter()
        .map(|(_, stats)| {
            rows.iter()
                .map(|r| match r {
                    Row::Value(_, f) => f(stats),
                    Row::Heading(_) => String::new(),
                })
                .collect()
        })
        .collect();
    let widths: Vec<usize> = columns
        .iter()
        .zip(&cells)
        .map(|((name, _), col)| col.iter().map(String::len).chain([name.len()]).max().unwrap_or(0))
        .collect();

    let mut out = format!("{:<label_width$}", "Statistic");
    for ((name, _), w) in columns.iter().zip(&widths) {
        out.push_str(&format!(" | {name:>w$}"));
    }
    out = out.trim_end().to_string();
    out.push('\n');
    let rule_len = label_width + widths.iter().map(|w| w + 3).sum::<usize>();
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for (r, row) in rows.iter().enumerate() {
        match row {
            Row::Heading(label) => {
                out.push_str(label);
            }
            Row::Value(label, _) => {
                out.push_str(&format!("{label:<label_width$}"));
                for (col, w) in cells.iter().zip(&widths) {
                    out.push_str(&format!(" | {:>w$}", col[r]));
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct RowOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    sample: &'a CitationSample,
}

#[derive(Deserialize)]
struct RowIn {
    schema_version: u32,
    #[serde(flatten)]
    sample: CitationSample,
}

/// Writes samples as JSONL plus a manifest sidecar carrying the count and a
/// digest of the dataset statistics.
pub fn write_dataset(samples: &[CitationSample], path: &Path) -> Result<Manifest> {
    let rows: Vec<RowOut> = samples
        .iter()
        .map(|sample| RowOut {
            schema_version: DATASET_SCHEMA_VERSION,
            sample,
        })
        .collect();
    let count = jsonl::write_jsonl(path, &rows)?;
    let stats = compute_stats(samples);
    let stats_json = serde_json::to_vec(&stats).expect("stats serialize");
    let manifest = Manifest::for_file("citation-dataset", DATASET_SCHEMA_VERSION, count, path)?
        .with_detail("stats_sha256", jsonl::sha256_hex(&stats_json))
        .with_detail("stats", &stats);
    manifest.write_for(path)?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<CitationSample>> {
    let rows: Vec<RowIn> = jsonl::read_jsonl(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.schema_version != DATASET_SCHEMA_VERSION {
                return Err(Error::CorruptLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("unsupported schema_version {}", row.schema_version),
                });
            }
            Ok(row.sample)
        })
        .collect()
}
