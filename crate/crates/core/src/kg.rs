//! Knowledge-graph triplets produced by an external entity/relation extractor.
//!
//! The triplet file is JSONL, one block per line:
//!
//! ```text
//! {"paper_id": "p2", "section": "abstract",
//!  "triplets": [{"head": "CNN", "relation": "Used-For", "tail": "image classification",
//!                "head_type": "Method", "tail_type": "Task"}]}
//! ```
//!
//! `section` is one of `abstract`, `introduction`, `conclusion`; the entity
//! types are optional.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CitationSample;
use crate::error::{Error, Result};
use crate::jsonl;

/// Relation labels of the SciERC scheme.
pub const SCIERC_RELATIONS: [&str; 7] = [
    "Used-For",
    "Part-Of",
    "Feature-Of",
    "Compare",
    "Conjunction",
    "Evaluate-For",
    "Hyponym-Of",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Abstract,
    Introduction,
    Conclusion,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Abstract, Section::Introduction, Section::Conclusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Abstract => "abstract",
            Section::Introduction => "introduction",
            Section::Conclusion => "conclusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgTriplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_type: Option<String>,
}

/// Trims and collapses internal whitespace runs; case is kept.
pub fn normalize_mention(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl KgTriplet {
    /// Normalizes every field, returning `None` when an invariant fails
    /// (empty field, or head equal to tail).
    pub fn normalized(&self) -> Option<KgTriplet> {
        let head = normalize_mention(&self.head);
        let relation = normalize_mention(&self.relation);
        let tail = normalize_mention(&self.tail);
        if head.is_empty() || relation.is_empty() || tail.is_empty() || head == tail {
            return None;
        }
        let opt = |s: &Option<String>| s.as_deref().map(normalize_mention).filter(|s| !s.is_empty());
        Some(KgTriplet {
            head,
            relation,
            tail,
            head_type: opt(&self.head_type),
            tail_type: opt(&self.tail_type),
        })
    }

    fn key(&self) -> (String, String, String) {
        (self.head.clone(), self.relation.clone(), self.tail.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSet {
    pub paper_id: String,
    pub section: Section,
    pub triplets: Vec<KgTriplet>,
}

impl TripletSet {
    pub fn empty(paper_id: &str, section: Section) -> Self {
        TripletSet {
            paper_id: paper_id.to_string(),
            section,
            triplets: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Appends triplets not already present by (head, relation, tail).
    fn extend_dedup(&mut self, triplets: impl IntoIterator<Item = KgTriplet>) {
        let mut seen: HashSet<_> = self.triplets.iter().map(KgTriplet::key).collect();
        for t in triplets {
            if seen.insert(t.key()) {
                self.triplets.push(t);
            }
        }
    }
}

pub type TripletMap = BTreeMap<String, Vec<TripletSet>>;

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// When set, relations outside this vocabulary are counted (and kept).
    pub relation_vocabulary: Option<BTreeSet<String>>,
}

impl LoadOptions {
    pub fn scierc() -> Self {
        LoadOptions {
            relation_vocabulary: Some(SCIERC_RELATIONS.iter().map(|s| s.to_string()).collect()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub lines: usize,
    pub malformed_lines: usize,
    pub invalid_triplets: usize,
    pub duplicate_triplets: usize,
    pub merged_blocks: usize,
    pub unknown_relations: usize,
}

#[derive(Deserialize)]
struct BlockIn {
    paper_id: String,
    section: Section,
    #[serde(default)]
    triplets: Vec<KgTriplet>,
}

/// Loads a triplet file. Blocks for the same (paper, section) are merged;
/// duplicate triplets are dropped after normalization.
pub fn load_triplets(path: &Path, options: &LoadOptions) -> Result<(TripletMap, LoadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut stats = LoadStats::default();
    let mut map = TripletMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let block: BlockIn = match serde_json::from_str(&line) {
            Ok(b) => b,
            Err(_) => {
                stats.malformed_lines += 1;
                continue;
            }
        };
        let paper_id = block.paper_id.trim().to_string();
        if paper_id.is_empty() {
            stats.malformed_lines += 1;
            continue;
        }
        let mut kept = Vec::with_capacity(block.triplets.len());
        for t in &block.triplets {
            match t.normalized() {
                Some(t) => {
                    if let Some(vocab) = &options.relation_vocabulary {
                        if !vocab.contains(&t.relation) {
                            stats.unknown_relations += 1;
                        }
                    }
                    kept.push(t);
                }
                None => stats.invalid_triplets += 1,
            }
        }
        let sets = map.entry(paper_id.clone()).or_default();
        let set = match sets.iter_mut().position(|s| s.section == block.section) {
            Some(i) => {
                stats.merged_blocks += 1;
                &mut sets[i]
            }
            None => {
                sets.push(TripletSet::empty(&paper_id, block.section));
                sets.last_mut().expect("just pushed")
            }
        };
        let before = set.triplets.len() + kept.len();
        set.extend_dedup(kept);
        stats.duplicate_triplets += before - set.triplets.len();
    }
    Ok((map, stats))
}

#[derive(Serialize)]
struct BlockOut<'a> {
    paper_id: &'a str,
    section: Section,
    triplets: &'a [KgTriplet],
}

/// Writes one block per (paper, section) in map order.
pub fn write_triplets(map: &TripletMap, path: &Path) -> Result<usize> {
    let blocks: Vec<BlockOut> = map
        .values()
        .flatten()
        .map(|s| BlockOut {
            paper_id: &s.paper_id,
            section: s.section,
            triplets: &s.triplets,
        })
        .collect();
    jsonl::write_jsonl(path, &blocks)
}

fn lookup_set(map: &TripletMap, paper_id: &str, section: Section) -> TripletSet {
    map.get(paper_id)
        .and_then(|sets| sets.iter().find(|s| s.section == section))
        .cloned()
        .unwrap_or_else(|| TripletSet::empty(paper_id, section))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTriplets {
    pub paper_id: String,
    #[serde(rename = "abstract")]
    pub abstract_set: TripletSet,
    pub introduction: TripletSet,
    pub conclusion: TripletSet,
}

impl TargetTriplets {
    pub fn sets(&self) -> [&TripletSet; 3] {
        [&self.abstract_set, &self.introduction, &self.conclusion]
    }

    pub fn is_empty(&self) -> bool {
        self.sets().iter().all(|s| s.is_empty())
    }

    /// All three sections merged in section order, deduplicated.
    pub fn pooled(&self) -> TripletSet {
        let mut pooled = TripletSet::empty(&self.paper_id, Section::Abstract);
        for set in self.sets() {
            pooled.extend_dedup(set.triplets.iter().cloned());
        }
        pooled
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedSample {
    pub sample: CitationSample,
    pub source_abstract: TripletSet,
    pub targets: Vec<TargetTriplets>,
    /// Set when no target carries any triplet.
    pub missing_target_triplets: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachStats {
    pub samples: usize,
    pub flagged_without_target_triplets: usize,
    pub orphan_papers: usize,
}

/// Attaches source-abstract and per-target triplet sets to each sample.
/// Sample count and order are unchanged.
pub fn attach_triplets(samples: Vec<CitationSample>, map: &TripletMap) -> (Vec<EnrichedSample>, AttachStats) {
    let mut stats = AttachStats {
        samples: samples.len(),
        ..AttachStats::default()
    };
    let mut referenced: HashSet<&str> = HashSet::new();
    for s in &samples {
        referenced.insert(&s.source_paper_id);
        referenced.extend(s.targets.iter().map(|t| t.paper_id.as_str()));
    }
    stats.orphan_papers = map.keys().filter(|id| !referenced.contains(id.as_str())).count();

    let enriched = samples
        .into_iter()
        .map(|sample| {
            let source_abstract = lookup_set(map, &sample.source_paper_id, Section::Abstract);
            let targets: Vec<TargetTriplets> = sample
                .targets
                .iter()
                .map(|t| TargetTriplets {
                    paper_id: t.paper_id.clone(),
                    abstract_set: lookup_set(map, &t.paper_id, Section::Abstract),
                    introduction: lookup_set(map, &t.paper_id, Section::Introduction),
                    conclusion: lookup_set(map, &t.paper_id, Section::Conclusion),
                })
                .collect();
            let missing = targets.iter().all(TargetTriplets::is_empty);
            if missing {
                stats.flagged_without_target_triplets += 1;
            }
            EnrichedSample {
                sample,
                source_abstract,
                targets,
                missing_target_triplets: missing,
            }
        })
        .collect();
    (enriched, stats)
}

pub fn format_triplet(t: &KgTriplet) -> String {
    format!("({} | {} | {})", t.head, t.relation, t.tail)
}

/// Renders the first `budget` triplets as `(head | relation | tail)` items
/// joined by `"; "`.
pub fn render_triplets(set: &TripletSet, budget: usize) -> String {
    set.triplets
        .iter()
        .take(budget)
        .map(format_triplet)
        .collect::<Vec<_>>()
        .join("; ")
}
