use std::fs;
use std::io::Write;
use std::path::Path;

use citegen_core::corpus::{stream_corpus, CorpusFilter, PaperRecord};
use citegen_core::Error;
use serde_json::json;

fn write_lines(path: &Path, lines: &[String]) {
    let mut f = fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

fn record(id: &str, fields: &[&str]) -> String {
    json!({
        "paper_id": id,
        "title": format!("Title {id}"),
        "abstract": "An abstract.",
        "fields_of_study": fields,
        "body_text": [{
            "section": "Introduction",
            "text": "Graphs help. Prior work [1] and [2] agree.",
            "cite_spans": [
                {"start": 24, "end": 27, "cited_paper_id": "x"},
                {"start": 32, "end": 35, "cited_paper_id": null}
            ]
        }]
    })
    .to_string()
}

fn collect(path: &Path, filter: CorpusFilter) -> (Vec<PaperRecord>, citegen_core::corpus::IngestStats) {
    let mut stream = stream_corpus(path, filter).unwrap();
    let records: Vec<PaperRecord> = stream.by_ref().map(Result::unwrap).collect();
    (records, stream.stats().clone())
}

#[test]
fn empty_file_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    let (records, stats) = collect(&path, CorpusFilter::default());
    assert!(records.is_empty());
    assert_eq!(stats.skipped(), 0);
}

#[test]
fn biology_only_record_is_filtered() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_lines(
        &path,
        &[
            record("p1", &["Computer Science"]),
            record("p2", &["Biology"]),
            record("p3", &["Computer Science", "Mathematics"]),
        ],
    );
    let (records, stats) = collect(&path, CorpusFilter::default());
    let ids: Vec<&str> = records.iter().map(|r| r.paper_id.as_str()).collect();
    assert_eq!(ids, ["p1", "p3"]);
    assert_eq!(stats.filtered_out, 1);
    let cites: Vec<_> = records[0].body_sections[0].spans_in(1).collect();
    assert_eq!(cites.len(), 2);
    assert_eq!(cites[0].resolved_paper_id.as_deref(), Some("x"));
    assert_eq!((cites[0].char_start, cites[0].char_end), (11, 14));
    assert!(cites[1].resolved_paper_id.is_none());
}

#[test]
fn truncated_line_is_counted_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let whole = record("p1", &["Computer Science"]);
    let cut = record("p2", &["Computer Science"]);
    write_lines(
        &path,
        &[
            whole.clone(),
            cut[..cut.len() / 2].to_string(),
            record("p3", &["Computer Science"]),
        ],
    );
    let (records, stats) = collect(&path, CorpusFilter::default());
    assert_eq!(records.len(), 2);
    assert_eq!(stats.malformed, 1);
    assert_eq!(stats.skipped(), 1);
}

#[test]
fn shards_are_read_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    write_lines(&dir.path().join("b.jsonl"), &[record("p2", &["Computer Science"])]);
    write_lines(&dir.path().join("a.jsonl"), &[record("p1", &["Computer Science"])]);
    write_lines(&dir.path().join(".hidden"), &[record("zz", &["Computer Science"])]);
    let (records, _) = collect(dir.path(), CorpusFilter::default());
    let ids: Vec<&str> = records.iter().map(|r| r.paper_id.as_str()).collect();
    assert_eq!(ids, ["p1", "p2"]);
}

#[test]
fn missing_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        stream_corpus(&dir.path().join("nope.jsonl"), CorpusFilter::default()),
        Err(Error::Io { .. })
    ));
}

#[test]
fn one_large_record_bounds_the_line_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let small = record("s", &["Computer Science"]);
    let big = json!({
        "paper_id": "big",
        "abstract": "x".repeat(4 << 20),
        "fields_of_study": ["Computer Science"],
    })
    .to_string();
    let mut lines: Vec<String> = (0..500).map(|i| small.replace("\"s\"", &format!("\"s{i}\""))).collect();
    lines.insert(250, big.clone());
    write_lines(&path, &lines);

    let (records, stats) = collect(&path, CorpusFilter::default());
    assert_eq!(records.len(), 501);
    assert_eq!(stats.peak_line_bytes, big.len());
    assert!(stats.peak_line_bytes < fs::metadata(&path).unwrap().len() as usize);

    // Determinism: a second pass yields the identical sequence.
    let (again, _) = collect(&path, CorpusFilter::default());
    assert_eq!(
        serde_json::to_vec(&records).unwrap(),
        serde_json::to_vec(&again).unwrap()
    );
}
