//! Streaming ingest of S2ORC-style JSONL paper records.
//!
//! Each non-blank line holds one paper. Lines that are not valid JSON, or that
//! fail [`validate_record`], are skipped and tallied in [`IngestStats`]; only
//! I/O failures end the stream. A corpus may be a single file or a directory
//! of shards, which are read in lexicographic filename order.
//!
//! Input field names and the accepted aliases:
//!
//! | record field      | JSON key(s)                               |
//! |-------------------|-------------------------------------------|
//! | `paper_id`        | `source_paper_id`, `paper_id`             |
//! | `title`           | `title`                                   |
//! | `abstract_text`   | `source_abstract`, `abstract`             |
//! | `fields_of_study` | `fields_of_study`, `mag_field_of_study`   |
//! | `body_sections`   | `body_text`                               |
//!
//! A `body_text` entry is either a paragraph `{section, text, cite_spans}`
//! whose spans carry character offsets into `text`, or a pre-split
//! `{section, sentences, cite_spans}` whose spans also carry `sentence_index`.
//! Span keys are `start`, `end` and `cited_paper_id` (null when unresolved).
//! Offsets count Unicode scalar values.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: Option<String>,
    pub abstract_text: Option<String>,
    pub fields_of_study: Vec<String>,
    pub body_sections: Vec<BodySection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodySection {
    pub section_name: String,
    pub sentences: Vec<String>,
    pub cite_spans: Vec<CiteSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiteSpan {
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub resolved_paper_id: Option<String>,
}

impl BodySection {
    /// Cite spans attached to one sentence, in offset order.
    pub fn spans_in(&self, sentence_index: usize) -> impl Iterator<Item = &CiteSpan> {
        let mut spans: Vec<&CiteSpan> = self
            .cite_spans
            .iter()
            .filter(|s| s.sentence_index == sentence_index)
            .collect();
        spans.sort_by_key(|s| (s.char_start, s.char_end));
        spans.into_iter()
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

/// The first violated field of a raw record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Accepted fields of study; a record passes when any of its fields is a
/// member. Matching is exact and case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFilter {
    accepted: Option<BTreeSet<String>>,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        CorpusFilter::fields(["Computer Science"])
    }
}

impl CorpusFilter {
    pub fn fields<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CorpusFilter {
            accepted: Some(fields.into_iter().map(Into::into).collect()),
        }
    }

    /// Parses the comma-separated `--fields-of-study` flag value.
    pub fn parse_list(list: &str) -> Self {
        CorpusFilter::fields(
            list.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        )
    }

    /// Accepts every record regardless of its fields of study.
    pub fn any() -> Self {
        CorpusFilter { accepted: None }
    }

    pub fn accepts(&self, record: &PaperRecord) -> bool {
        match &self.accepted {
            None => true,
            Some(set) => record.fields_of_study.iter().any(|f| set.contains(f)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub yielded: usize,
    pub filtered_out: usize,
    /// Lines that were not a JSON object.
    pub malformed: usize,
    /// Lines that parsed but violated a record invariant.
    pub invalid: usize,
    /// Longest line seen, in bytes. The reader never holds more than one line.
    pub peak_line_bytes: usize,
}

impl IngestStats {
    pub fn skipped(&self) -> usize {
        self.malformed + self.invalid
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.lines += other.lines;
        self.yielded += other.yielded;
        self.filtered_out += other.filtered_out;
        self.malformed += other.malformed;
        self.invalid += other.invalid;
        self.peak_line_bytes = self.peak_line_bytes.max(other.peak_line_bytes);
    }
}

/// Resolves a corpus path to its shard list: a file is its own shard, a
/// directory contributes every regular file in lexicographic name order.
pub fn corpus_shards(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if !meta.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut shards = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let file_type = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        let name = entry.file_name();
        if file_type.is_file() && !name.to_string_lossy().starts_with('.') {
            shards.push(entry.path());
        }
    }
    shards.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(shards)
}

/// Lazily reads records from one or more shards.
pub struct CorpusStream {
    shards: std::vec::IntoIter<PathBuf>,
    current: Option<(PathBuf, BufReader<File>)>,
    filter: CorpusFilter,
    stats: IngestStats,
    buf: Vec<u8>,
    failed: bool,
}

pub fn stream_corpus(path: &Path, filter: CorpusFilter) -> Result<CorpusStream> {
    let shards = corpus_shards(path)?;
    Ok(CorpusStream::from_shards(shards, filter))
}

impl CorpusStream {
    pub fn from_shards(shards: Vec<PathBuf>, filter: CorpusFilter) -> Self {
        CorpusStream {
            shards: shards.into_iter(),
            current: None,
            filter,
            stats: IngestStats::default(),
            buf: Vec::new(),
            failed: false,
        }
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    fn handle_line(&mut self) -> Option<PaperRecord> {
        let mut line = &self.buf[..];
        while let Some((last, rest)) = line.split_last() {
            if *last == b'\n' || *last == b'\r' {
                line = rest;
            } else {
                break;
            }
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            return None;
        }
        self.stats.lines += 1;
        self.stats.peak_line_bytes = self.stats.peak_line_bytes.max(line.len());
        let raw: Value = match serde_json::from_slice(line) {
            Ok(v @ Value::Object(_)) => v,
            _ => {
                self.stats.malformed += 1;
                return None;
            }
        };
        match validate_record(&raw) {
            Ok(record) if self.filter.accepts(&record) => {
                self.stats.yielded += 1;
                Some(record)
            }
            Ok(_) => {
                self.stats.filtered_out += 1;
                None
            }
            Err(_) => {
                self.stats.invalid += 1;
                None
            }
        }
    }
}

impl Iterator for CorpusStream {
    type Item = Result<PaperRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if self.current.is_none() {
                let path = self.shards.next()?;
                match File::open(&path) {
                    Ok(f) => self.current = Some((path, BufReader::new(f))),
                    Err(e) => {
                        self.failed = true;
                        return Some(Err(Error::io(path, e)));
                    }
                }
            }
            let (path, reader) = self.current.as_mut().expect("shard is open");
            self.buf.clear();
            match reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.current = None;
                    continue;
                }
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(path.clone(), e)));
                }
            }
            let record = self.handle_line();
            // Release the buffer if a single huge record grew it.
            if self.buf.capacity() > 1 << 20 {
                self.buf = Vec::new();
            }
            if let Some(record) = record {
                return Some(Ok(record));
            }
        }
    }
}

fn first_key<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k)).filter(|v| !v.is_null())
}

fn optional_string(obj: &Map<String, Value>, keys: &[&str], field: &str) -> Result<Option<String>, ValidationError> {
    match first_key(obj, keys) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ValidationError::new(field, "expected a string")),
    }
}

fn span_offset(span: &Map<String, Value>, key: &str, field: &str) -> Result<usize, ValidationError> {
    span.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| ValidationError::new(field, format!("missing or non-integer `{key}`")))
}

/// Checks a structurally parsed record against every [`PaperRecord`]
/// invariant and converts it. The error names the first violated field.
pub fn validate_record(raw: &Value) -> Result<PaperRecord, ValidationError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| ValidationError::new("record", "expected a JSON object"))?;

    let paper_id = match first_key(obj, &["source_paper_id", "paper_id"]) {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => return Err(ValidationError::new("paper_id", "empty")),
        Some(_) => return Err(ValidationError::new("paper_id", "expected a string")),
        None => return Err(ValidationError::new("paper_id", "missing")),
    };
    let title = optional_string(obj, &["title"], "title")?;
    let abstract_text = optional_string(obj, &["source_abstract", "abstract"], "abstract")?;

    let fields_of_study = match first_key(obj, &["fields_of_study", "mag_field_of_study"]) {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ValidationError::new(format!("fields_of_study[{i}]"), "expected a string"))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(ValidationError::new("fields_of_study", "expected a list")),
    };

    let body_sections = match first_key(obj, &["body_text"]) {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| validate_section(v, &format!("body_text[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(ValidationError::new("body_text", "expected a list")),
    };

    Ok(PaperRecord {
        paper_id,
        title,
        abstract_text,
        fields_of_study,
        body_sections,
    })
}

fn validate_section(raw: &Value, field: &str) -> Result<BodySection, ValidationError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| ValidationError::new(field, "expected an object"))?;
    let section_name = optional_string(obj, &["section"], &format!("{field}.section"))?.unwrap_or_default();
    let raw_spans = match obj.get("cite_spans") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.clone(),
        Some(_) => return Err(ValidationError::new(format!("{field}.cite_spans"), "expected a list")),
    };

    if let Some(sentences) = obj.get("sentences").filter(|v| !v.is_null()) {
        let sentences: Vec<String> = sentences
            .as_array()
            .ok_or_else(|| ValidationError::new(format!("{field}.sentences"), "expected a list"))?
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ValidationError::new(format!("{field}.sentences[{i}]"), "expected a string"))
            })
            .collect::<Result<_, _>>()?;
        let lengths: Vec<usize> = sentences.iter().map(|s| s.chars().count()).collect();
        let mut cite_spans = Vec::with_capacity(raw_spans.len());
        for (j, span) in raw_spans.iter().enumerate() {
            let span_field = format!("{field}.cite_spans[{j}]");
            let span_obj = span
                .as_object()
                .ok_or_else(|| ValidationError::new(&span_field, "expected an object"))?;
            let sentence_index = span_offset(span_obj, "sentence_index", &span_field)?;
            let start = span_offset(span_obj, "start", &span_field)?;
            let end = span_offset(span_obj, "end", &span_field)?;
            let len = *lengths
                .get(sentence_index)
                .ok_or_else(|| ValidationError::new(&span_field, "sentence_index out of range"))?;
            if end <= start || end > len {
                return Err(ValidationError::new(
                    &span_field,
                    format!("char range {start}..{end} outside sentence of length {len}"),
                ));
            }
            cite_spans.push(CiteSpan {
                sentence_index,
                char_start: start,
                char_end: end,
                resolved_paper_id: cited_id(span_obj, &span_field)?,
            });
        }
        return Ok(BodySection {
            section_name,
            sentences,
            cite_spans,
        });
    }

    let text = optional_string(obj, &["text"], &format!("{field}.text"))?.unwrap_or_default();
    let chars: Vec<char> = text.chars().collect();
    let bounds = sentence_bounds(&text);
    let mut cite_spans = Vec::with_capacity(raw_spans.len());
    for (j, span) in raw_spans.iter().enumerate() {
        let span_field = format!("{field}.cite_spans[{j}]");
        let span_obj = span
            .as_object()
            .ok_or_else(|| ValidationError::new(&span_field, "expected an object"))?;
        let start = span_offset(span_obj, "start", &span_field)?;
        let end = span_offset(span_obj, "end", &span_field)?;
        if end <= start || end > chars.len() {
            return Err(ValidationError::new(
                &span_field,
                format!("char range {start}..{end} outside text of length {}", chars.len()),
            ));
        }
        let (sentence_index, range) = bounds
            .iter()
            .enumerate()
            .find(|(_, r)| r.start <= start && start < r.end)
            .ok_or_else(|| ValidationError::new(&span_field, "span starts between sentences"))?;
        if end > range.end {
            return Err(ValidationError::new(&span_field, "span crosses a sentence boundary"));
        }
        cite_spans.push(CiteSpan {
            sentence_index,
            char_start: start - range.start,
            char_end: end - range.start,
            resolved_paper_id: cited_id(span_obj, &span_field)?,
        });
    }
    let sentences = bounds.iter().map(|r| chars[r.clone()].iter().collect()).collect();
    Ok(BodySection {
        section_name,
        sentences,
        cite_spans,
    })
}

fn cited_id(span: &Map<String, Value>, field: &str) -> Result<Option<String>, ValidationError> {
    match span.get("cited_paper_id") {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ValidationError::new(field, "cited_paper_id must be a string")),
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Character ranges of the sentences in `text`. A boundary falls after a run
/// of `.`, `!` or `?` that is followed by whitespace and then an uppercase
/// letter or `[`. Surrounding whitespace is not part of any sentence.
pub fn sentence_bounds(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n && chars[start].is_whitespace() {
        start += 1;
    }
    let mut i = start;
    while i < n {
        if is_terminal(chars[i]) && i + 1 < n && chars[i + 1].is_whitespace() {
            let mut k = i + 1;
            while k < n && chars[k].is_whitespace() {
                k += 1;
            }
            if k < n && (chars[k].is_uppercase() || chars[k] == '[') {
                bounds.push(start..i + 1);
                start = k;
                i = k;
                continue;
            }
        }
        i += 1;
    }
    let mut end = n;
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if end > start {
        bounds.push(start..end);
    }
    bounds
}

pub fn sentence_split(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    sentence_bounds(text)
        .into_iter()
        .map(|r| chars[r].iter().collect())
        .collect()
}
