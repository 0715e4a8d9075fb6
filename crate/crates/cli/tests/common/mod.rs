#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

pub const CS: &str = "Computer Science";

/// A paragraph sentence; every `@` becomes a bracketed marker carrying the
/// matching cite (`None` for an unresolved one).
pub struct Sent(pub &'static str, pub Vec<Option<&'static str>>);

pub fn s(text: &'static str, cites: &[&'static str]) -> Sent {
    Sent(text, cites.iter().map(|c| (*c != "?").then_some(*c)).collect())
}

pub fn paragraph(section: &str, sentences: &[Sent]) -> Value {
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut marker = 0;
    for (i, Sent(template, cites)) in sentences.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let mut cites = cites.iter();
        for (j, piece) in template.split('@').enumerate() {
            if j > 0 {
                marker += 1;
                let start = text.chars().count();
                text.push_str(&format!("[{marker}]"));
                let end = text.chars().count();
                let cite = cites.next().expect("one cite per marker");
                spans.push(json!({"start": start, "end": end, "cited_paper_id": cite}));
            }
            text.push_str(piece);
        }
        assert!(cites.next().is_none(), "more cites than markers in {template:?}");
    }
    json!({"section": section, "text": text, "cite_spans": spans})
}

pub fn paper(id: &str, fields: &[&str], abstract_text: Option<&str>, body: Vec<Value>) -> Value {
    json!({
        "paper_id": id,
        "title": format!("On {id}"),
        "abstract": abstract_text,
        "fields_of_study": fields,
        "body_text": body,
    })
}

fn target_abstract(n: usize) -> String {
    format!(
        "We study problem {n} with a graph neural model. Experiments on benchmark {n} show that attention improves \
         accuracy over strong baselines."
    )
}

/// Twenty cited papers and thirty citing papers with planted patterns.
pub fn synthetic_corpus() -> Vec<Value> {
    let mut papers = Vec::new();
    for n in 1..=20 {
        let id: &'static str = Box::leak(format!("t{n:02}").into_boxed_str());
        let abs = (n <= 18).then(|| target_abstract(n));
        let mut body = Vec::new();
        if n % 3 == 0 {
            body.push(paragraph(
                "Introduction",
                &[s("Graph models are popular. We extend them to new tasks.", &[])],
            ));
            body.push(paragraph(
                "Conclusion",
                &[s("Attention helps on every benchmark.", &[])],
            ));
        }
        papers.push(paper(id, &[CS], abs.as_deref(), body));
    }
    let abs = Some("We propose a citation generator that reads several abstracts and writes one paragraph.");
    let rw = "Related Work";
    let body = |sents: Vec<Sent>| vec![paragraph(rw, &sents)];
    papers.extend([
        paper(
            "s01",
            &[CS],
            abs,
            body(vec![s("Graph methods @ and @ are common.", &["t01", "t02"])]),
        ),
        paper("s02", &[CS], abs, body(vec![s("One method @ is common.", &["t01"])])),
        paper(
            "s03",
            &[CS],
            abs,
            body(vec![s(
                "Many systems @, @, @ and @ exist.",
                &["t01", "t02", "t03", "t04"],
            )]),
        ),
        paper(
            "s04",
            &[CS],
            abs,
            body(vec![s("Both @ and @ study it.", &["t01", "t19"])]),
        ),
        paper(
            "s05",
            &[CS],
            abs,
            body(vec![
                s("Early work @ and @ defined the task.", &["t01", "t02"]),
                s("The latter @ also released data.", &["t02"]),
                s("We differ from all of them.", &[]),
            ]),
        ),
        paper(
            "s06",
            &[CS],
            abs,
            body(vec![
                s("Attention was introduced in @ first.", &["t03"]),
                s("It was refined by @ and @ later.", &["t03", "t04"]),
            ]),
        ),
        paper(
            "s07",
            &[CS],
            abs,
            body(vec![
                s("Pretraining @ and @ helps.", &["t01", "t02"]),
                s("Distillation @ helps too.", &["t05"]),
            ]),
        ),
        paper(
            "s08",
            &[CS],
            abs,
            body(vec![s("Graphs @ and @ are sparse.", &["t01", "?"])]),
        ),
        paper(
            "s09",
            &[CS],
            abs,
            body(vec![s("Graphs @, @ and @ are sparse.", &["t01", "t02", "?"])]),
        ),
        paper(
            "s10",
            &[CS],
            abs,
            body(vec![s("Our prior work @ and @ did this.", &["s10", "t01"])]),
        ),
        paper(
            "s11",
            &[CS],
            abs,
            body(vec![s("The same paper @ and @ again.", &["t01", "t01"])]),
        ),
        paper(
            "s12",
            &["Biology"],
            abs,
            body(vec![s("Cells @ and @ divide.", &["t01", "t02"])]),
        ),
        paper(
            "s13",
            &[CS],
            None,
            body(vec![s("Parsers @ and @ exist.", &["t01", "t02"])]),
        ),
        paper(
            "s14",
            &[CS],
            abs,
            body(vec![
                s("Encoders @ and @ are strong.", &["t05", "t06"]),
                s("We use neither.", &[]),
                s("Decoders @ and @ are fast.", &["t07", "t08"]),
            ]),
        ),
        paper(
            "s15",
            &[CS],
            abs,
            body(vec![s("Known @ and unknown @ work.", &["t01", "ghost"])]),
        ),
        paper(
            "s16",
            &[CS],
            abs,
            vec![
                paragraph(
                    "Introduction",
                    &[s("Citation text generation @ and @ is hard.", &["t09", "t10"])],
                ),
                paragraph(
                    "Related Work",
                    &[s("Summarization @ and @ is related.", &["t11", "t12"])],
                ),
            ],
        ),
        paper(
            "s17",
            &[CS],
            abs,
            body(vec![s("Three works @, @ and @ agree.", &["t06", "t07", "t08"])]),
        ),
        paper(
            "s18",
            &[CS],
            abs,
            body(vec![
                s("Retrieval @ and @ is key.", &["t01", "t02"]),
                s("Both @ and @ retrieve passages.", &["t02", "t01"]),
            ]),
        ),
        paper(
            "s19",
            &[CS],
            abs,
            body(vec![
                s("Sequence models @ and @ dominate.", &["t09", "t10"]),
                s("Others @ and @ disagree.", &["t09", "?"]),
            ]),
        ),
        paper(
            "s20",
            &[CS],
            abs,
            body(vec![s("Graphs @ and @ scale.", &["t11", "t12"])]),
        ),
        paper(
            "s21",
            &[CS],
            abs,
            body(vec![s("Triples @, @ and @ appear.", &["t13", "t14", "t15"])]),
        ),
        paper("s22", &[CS], abs, body(vec![s("A single method @ wins.", &["t13"])])),
        paper("s23", &[CS], abs, body(vec![s("No citations here. None at all.", &[])])),
        paper(
            "s24",
            &[CS],
            abs,
            body(vec![s("Losses @ and @ differ.", &["t16", "t17"])]),
        ),
        paper(
            "s25",
            &[CS],
            abs,
            body(vec![s("Missing @ and @ abstracts.", &["t18", "t20"])]),
        ),
        paper(
            "s26",
            &["Mathematics", CS],
            abs,
            body(vec![s("Proofs @ and @ use graphs.", &["t01", "t03"])]),
        ),
        paper(
            "s27",
            &["Mathematics"],
            abs,
            body(vec![s("Lemmas @ and @ hold.", &["t01", "t02"])]),
        ),
        paper(
            "s28",
            &[CS],
            abs,
            body(vec![s("Benchmarks @ and @ are small.", &["t02", "t04"])]),
        ),
        paper("s29", &[CS], abs, body(vec![s("Nothing is cited in this paper.", &[])])),
        paper(
            "s30",
            &[CS],
            abs,
            body(vec![s("Metrics @ and @ correlate.", &["t05", "t06"])]),
        ),
    ]);
    papers
}

/// Writes the corpus as two shards under `dir`.
pub fn write_corpus(dir: &Path, papers: &[Value]) {
    std::fs::create_dir_all(dir).unwrap();
    let (a, b) = papers.split_at(papers.len() / 2);
    for (name, part) in [("part-0000.jsonl", a), ("part-0001.jsonl", b)] {
        let text: String = part.iter().map(|p| format!("{p}\n")).collect();
        std::fs::write(dir.join(name), text).unwrap();
    }
}

pub fn write_triplets(path: &Path) {
    let rows = [
        json!({"paper_id": "s01", "section": "abstract", "triplets": [
            {"head": "citation generator", "relation": "Used-For", "tail": "paragraph writing"}]}),
        json!({"paper_id": "t01", "section": "abstract", "triplets": [
            {"head": "graph neural model", "relation": "Used-For", "tail": "problem 1", "head_type": "Method"},
            {"head": "attention", "relation": "Part-Of", "tail": "graph neural model"}]}),
        json!({"paper_id": "t02", "section": "abstract", "triplets": [
            {"head": "attention", "relation": "Evaluate-For", "tail": "benchmark 2"}]}),
        json!({"paper_id": "t03", "section": "introduction", "triplets": [
            {"head": "graph models", "relation": "Used-For", "tail": "new tasks"}]}),
        json!({"paper_id": "t03", "section": "conclusion", "triplets": [
            {"head": "attention", "relation": "Compare", "tail": "baselines"}]}),
        json!({"paper_id": "t99", "section": "abstract", "triplets": [
            {"head": "orphan", "relation": "Used-For", "tail": "nothing"}]}),
    ];
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

pub fn citegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citegen"))
        .args(args)
        .env_remove("CITEGEN_API_KEY")
        .output()
        .expect("runs the binary")
}

pub fn citegen_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citegen"))
        .current_dir(dir)
        .args(args)
        .env_remove("CITEGEN_API_KEY")
        .output()
        .expect("runs the binary")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Generation service answering with the first words of the citation
/// instruction's input, after an optional delay.
#[derive(Clone, Default)]
pub struct MockEndpoint {
    pub calls: Arc<Mutex<Vec<String>>>,
    pub delay_ms: Arc<AtomicU64>,
}

impl MockEndpoint {
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    pub fn per_id(&self) -> HashMap<String, usize> {
        let mut counts = HashMap::new();
        for id in self.calls() {
            *counts.entry(id).or_default() += 1;
        }
        counts
    }
}

async fn answer(State(mock): State<MockEndpoint>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    let id = headers
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    mock.calls.lock().unwrap().push(id);
    let delay = mock.delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    let prompt = body["prompt"].as_str().unwrap_or_default();
    let words: Vec<&str> = prompt
        .split("### Input:")
        .nth(1)
        .unwrap_or(prompt)
        .split_whitespace()
        .take(30)
        .collect();
    Json(json!({"text": words.join(" ")}))
}

/// Serves the mock on a background runtime; returns its URL.
pub fn spawn_mock(mock: MockEndpoint) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new().route("/generate", post(answer)).with_state(mock);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}/generate", rx.recv().unwrap())
}
