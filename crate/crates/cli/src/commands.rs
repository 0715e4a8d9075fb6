use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use citegen_client::{generate_batch_blocking, ClientError, Endpoint, GenerationRequest, Policy};
use citegen_core::corpus::{stream_corpus, CorpusFilter};
use citegen_core::dataset::{
    cited_ids, compute_stats, extract_samples, read_dataset, render_stats_table, split_dataset, write_dataset,
    ExtractOptions, PaperLookup, SplitSpec,
};
use citegen_core::jsonl::{self, Manifest};
use citegen_core::kg::{attach_triplets, load_triplets, EnrichedSample, LoadOptions};
use citegen_core::metrics::{evaluate_corpus, render_results_table, EvalPair, EvalReport};
use citegen_core::numerics::{
    build_quantile_map, lr_at, minimize, raw_quantile_bins, AdamConfig, LrSchedule, MomentumRule, OptimizerState,
    Quadratic,
};
use citegen_core::prompt::{
    emit_finetune_file, emit_inference_file, read_prompt_file, render_baseline, render_kg, KgMode, PromptInstance,
    PromptOptions, TokenBudget, RESPONSE_KEY,
};
use clap::{Args, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::run::{run_manifest_path, RunLog};

/// A usage or validation problem (exit code 1).
#[derive(Debug)]
pub struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Invalid(format!("{e:#}")))
}

/// 1 for validation problems, 2 for I/O and endpoint failures.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<citegen_core::Error>() {
            return match err {
                citegen_core::Error::Io { .. } => 2,
                _ => 1,
            };
        }
        if let Some(err) = cause.downcast_ref::<ClientError>() {
            return match err {
                ClientError::Io { .. } | ClientError::Http(_) | ClientError::Runtime(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> anyhow::Result<T> {
    flag.or(file)
        .ok_or_else(|| invalid(format!("missing --{name} (no value in the config file either)")))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    jsonl::create_parent_dirs(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- build

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus JSONL file or directory of shards.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus holding the cited papers (default: the main corpus, unfiltered).
    #[arg(long)]
    lookup_corpus: Option<PathBuf>,
    /// Dataset JSONL to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated accepted fields of study.
    #[arg(long, value_name = "LIST")]
    fields_of_study: Option<String>,
    #[arg(long)]
    max_samples_per_source: Option<usize>,
}

pub fn build(a: BuildArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let corpus = required(a.corpus, config.paths.corpus.clone(), "corpus")?;
    let out = required(a.out, config.paths.dataset.clone(), "out")?;
    let lookup_corpus = a.lookup_corpus.unwrap_or_else(|| corpus.clone());
    let fields: Vec<String> = match (a.fields_of_study, &config.filter.fields_of_study) {
        (Some(list), _) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        (None, Some(fields)) => fields.clone(),
        (None, None) => vec!["Computer Science".to_string()],
    };
    if fields.is_empty() {
        return Err(invalid("--fields-of-study lists no field"));
    }
    let filter = CorpusFilter::fields(fields.iter().cloned());
    let options = ExtractOptions {
        max_samples_per_source: a.max_samples_per_source.or(config.filter.max_samples_per_source),
    };

    let mut wanted: HashSet<String> = HashSet::new();
    let mut first_pass = stream_corpus(&corpus, filter.clone())?;
    for record in first_pass.by_ref() {
        let record = record?;
        wanted.insert(record.paper_id.clone());
        wanted.extend(cited_ids(&record).map(String::from));
    }
    let ingest = first_pass.stats().clone();
    let lookup = PaperLookup::collect(stream_corpus(&lookup_corpus, CorpusFilter::any())?, Some(&wanted))?;

    let mut stream = stream_corpus(&corpus, filter.clone())?;
    let mut failure = None;
    let records = std::iter::from_fn(|| match stream.next()? {
        Ok(r) => Some(r),
        Err(e) => {
            failure = Some(e);
            None
        }
    });
    let (samples, extract) = extract_samples(records, &lookup, options);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let manifest = write_dataset(&samples, &out)?;
    eprintln!(
        "build: {} records read, {} kept by the filter, {} skipped; {} samples written to {}",
        ingest.lines,
        ingest.yielded,
        ingest.skipped(),
        manifest.count,
        out.display()
    );

    let mut log = RunLog::default();
    log.inputs.push(corpus.clone());
    if lookup_corpus != corpus {
        log.inputs.push(lookup_corpus.clone());
    }
    log.outputs = vec![out.clone(), Manifest::sidecar_path(&out)];
    log.setting("fields_of_study", &fields);
    log.setting("max_samples_per_source", options.max_samples_per_source);
    log.count("ingest", &ingest);
    log.count("extract", &extract);
    log.count("samples", samples.len());
    log.manifest_path = Some(run_manifest_path(&out));
    Ok(log)
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset JSONL; repeat for one column per dataset.
    #[arg(long = "dataset", value_name = "FILE")]
    datasets: Vec<PathBuf>,
    /// Column label per dataset (default: file stem).
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn stats(a: StatsArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let datasets = if a.datasets.is_empty() {
        vec![required(None, config.paths.dataset.clone(), "dataset")?]
    } else {
        a.datasets
    };
    if !a.labels.is_empty() && a.labels.len() != datasets.len() {
        return Err(invalid("give one --label per --dataset"));
    }
    let mut columns = Vec::new();
    let mut log = RunLog::default();
    for (i, path) in datasets.iter().enumerate() {
        let samples = read_dataset(path)?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| stem(path));
        let stats = compute_stats(&samples);
        log.count(&label, &stats);
        columns.push((label, stats));
    }
    let table = render_stats_table(&columns);
    print!("{table}");
    if let Some(out) = &a.out {
        write_text(out, &table)?;
        log.outputs.push(out.clone());
    }
    log.manifest_path = Some(match &a.out {
        Some(out) => run_manifest_path(out),
        None => {
            let mut name = datasets[0].as_os_str().to_os_string();
            name.push(".stats.run.json");
            PathBuf::from(name)
        }
    });
    log.inputs = datasets;
    Ok(log)
}

// ---------------------------------------------------------------- split

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory receiving train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    train: Option<f64>,
    #[arg(long)]
    val: Option<f64>,
    #[arg(long)]
    test: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn split(a: SplitArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let dataset = required(a.dataset, config.paths.dataset.clone(), "dataset")?;
    let out_dir = required(a.out_dir, config.paths.splits.clone(), "out-dir")?;
    let defaults = SplitSpec::default();
    let spec = SplitSpec {
        train_fraction: a.train.or(config.split.train).unwrap_or(defaults.train_fraction),
        val_fraction: a.val.or(config.split.val).unwrap_or(defaults.val_fraction),
        test_fraction: a.test.or(config.split.test).unwrap_or(defaults.test_fraction),
        seed: a.seed.or(config.split.seed).unwrap_or(defaults.seed),
    };
    spec.validate()?;
    let samples = read_dataset(&dataset)?;
    let splits = split_dataset(&samples, &spec)?;
    let mut log = RunLog::default();
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let path = out_dir.join(format!("{name}.jsonl"));
        write_dataset(part, &path)?;
        log.count(name, part.len());
        log.outputs.push(path.clone());
        log.outputs.push(Manifest::sidecar_path(&path));
    }
    eprintln!(
        "split: {} samples -> train {}, val {}, test {}",
        samples.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    log.setting("split", spec);
    log.inputs.push(dataset);
    log.manifest_path = Some(out_dir.join("split.run.json"));
    Ok(log)
}

// ---------------------------------------------------------------- kg-merge

#[derive(Debug, Args)]
pub struct KgMergeArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Triplet JSONL produced by the relation extractor.
    #[arg(long)]
    triplets: Option<PathBuf>,
    /// Enriched dataset JSONL to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count relations outside the SciERC label set.
    #[arg(long)]
    scierc_only: bool,
}

pub const ENRICHED_SCHEMA_VERSION: u32 = 1;

pub fn kg_merge(a: KgMergeArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let dataset = required(a.dataset, config.paths.dataset.clone(), "dataset")?;
    let triplets = required(a.triplets, config.paths.triplets.clone(), "triplets")?;
    let out = required(a.out, config.paths.enriched.clone(), "out")?;
    let scierc = a.scierc_only || config.filter.scierc_relations_only.unwrap_or(false);
    let options = if scierc {
        LoadOptions::scierc()
    } else {
        LoadOptions::default()
    };
    let samples = read_dataset(&dataset)?;
    let (map, load_stats) = load_triplets(&triplets, &options)?;
    let (enriched, attach_stats) = attach_triplets(samples, &map);
    let count = jsonl::write_jsonl(&out, &enriched)?;
    Manifest::for_file("kg-enriched-dataset", ENRICHED_SCHEMA_VERSION, count, &out)?
        .with_detail("load", &load_stats)
        .with_detail("attach", &attach_stats)
        .write_for(&out)?;
    if load_stats.malformed_lines + load_stats.invalid_triplets + load_stats.unknown_relations > 0 {
        eprintln!(
            "kg-merge: skipped {} malformed lines and {} invalid triplets; {} unknown relation labels",
            load_stats.malformed_lines, load_stats.invalid_triplets, load_stats.unknown_relations
        );
    }
    let mut log = RunLog {
        inputs: vec![dataset, triplets],
        outputs: vec![out.clone(), Manifest::sidecar_path(&out)],
        ..RunLog::default()
    };
    log.setting("scierc_only", scierc);
    log.count("load", &load_stats);
    log.count("attach", &attach_stats);
    log.manifest_path = Some(run_manifest_path(&out));
    Ok(log)
}

fn read_enriched(path: &Path) -> anyhow::Result<Vec<EnrichedSample>> {
    Ok(jsonl::read_jsonl(path)?)
}

// ---------------------------------------------------------------- prompts

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemplateKind {
    /// Abstracts only; reads a dataset file.
    Baseline,
    /// Abstracts plus relation blocks; reads a kg-merge output file.
    Kg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptMode {
    /// Rows of {sample_id, prompt, response}.
    Finetune,
    /// Rows of {sample_id, prompt}.
    Inference,
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Template: abstracts only, or abstracts plus relation blocks.
    #[arg(long, value_enum, default_value_t = TemplateKind::Baseline)]
    mode: TemplateKind,
    /// Row layout of the output file.
    #[arg(long, value_enum, default_value_t = PromptMode::Inference)]
    format: PromptMode,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hard cap on prompt plus response tokens.
    #[arg(long, alias = "max-tokens")]
    budget: Option<usize>,
    /// Tokens kept free for the response.
    #[arg(long)]
    reserve: Option<usize>,
    /// Most triplets rendered per relation block (default: all).
    #[arg(long)]
    triplet_budget: Option<usize>,
    #[arg(long)]
    include_introduction: bool,
    #[arg(long)]
    include_conclusion: bool,
    /// One relation block per target instead of one per section.
    #[arg(long)]
    pooled_kg: bool,
    /// Leave out relation blocks that have no triplets.
    #[arg(long)]
    hide_empty_kg: bool,
}

pub fn prompts(a: PromptsArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let default_input = match a.mode {
        TemplateKind::Baseline => config.paths.dataset.clone(),
        TemplateKind::Kg => config.paths.enriched.clone(),
    };
    let input = required(a.input, default_input, "input")?;
    let out = required(a.out, config.paths.prompts.clone(), "out")?;
    let max_tokens = a
        .budget
        .or(config.budget.max_tokens)
        .unwrap_or(citegen_core::prompt::DEFAULT_MAX_TOKENS);
    let mut budget = TokenBudget::new(max_tokens);
    if let Some(reserve) = a.reserve.or(config.budget.reserve_for_response) {
        budget = budget.with_reserve(reserve).map_err(invalid)?;
    }
    let triplet_budget = a.triplet_budget.or(config.budget.triplet_budget).unwrap_or(usize::MAX);
    let p = &config.prompt;
    let options = PromptOptions {
        include_introduction_text: a.include_introduction || p.include_introduction_text.unwrap_or(false),
        include_conclusion_text: a.include_conclusion || p.include_conclusion_text.unwrap_or(false),
        show_empty_kg_blocks: !a.hide_empty_kg && p.show_empty_kg_blocks.unwrap_or(true),
        kg_mode: if a.pooled_kg || p.pooled_kg.unwrap_or(false) {
            KgMode::Pooled
        } else {
            KgMode::PerSection
        },
    };

    let mut instances: Vec<PromptInstance> = Vec::new();
    let mut over_budget = Vec::new();
    let mut handle = |r: citegen_core::Result<PromptInstance>| -> anyhow::Result<()> {
        match r {
            Ok(i) => instances.push(i),
            Err(citegen_core::Error::BudgetExhausted { sample_id, .. }) => over_budget.push(sample_id),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    };
    let total = match a.mode {
        TemplateKind::Baseline => {
            let samples = read_dataset(&input)?;
            for s in &samples {
                handle(render_baseline(s, &budget, &options))?;
            }
            samples.len()
        }
        TemplateKind::Kg => {
            let samples = read_enriched(&input)?;
            for s in &samples {
                handle(render_kg(s, &budget, triplet_budget, &options))?;
            }
            samples.len()
        }
    };
    if !over_budget.is_empty() {
        eprintln!(
            "prompts: {} of {total} samples cannot fit the budget even without content: {}",
            over_budget.len(),
            over_budget.join(", ")
        );
        if instances.is_empty() {
            return Err(invalid(format!("no sample fits a budget of {max_tokens} tokens")));
        }
    }
    match a.format {
        PromptMode::Finetune => emit_finetune_file(&instances, &out)?,
        PromptMode::Inference => emit_inference_file(&instances, &out)?,
    };
    let truncated = instances.iter().filter(|i| !i.truncations.is_empty()).count();

    let mut log = RunLog::default();
    log.inputs.push(input);
    log.outputs = vec![out.clone(), Manifest::sidecar_path(&out)];
    log.setting("mode", format!("{:?}", a.mode).to_lowercase());
    log.setting("format", format!("{:?}", a.format).to_lowercase());
    log.setting("max_tokens", budget.max_tokens);
    log.setting("reserve_for_response", budget.reserve_for_response);
    log.setting("estimator", budget.estimator.name());
    log.setting(
        "triplet_budget",
        (triplet_budget != usize::MAX).then_some(triplet_budget),
    );
    log.setting("options", options);
    log.count("samples", total);
    log.count("prompts", instances.len());
    log.count("truncated", truncated);
    log.count("over_budget", over_budget.len());
    log.manifest_path = Some(run_manifest_path(&out));
    Ok(log)
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Prompt JSONL (inference or fine-tune rows).
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// URL receiving the JSON POST requests.
    #[arg(long)]
    endpoint: Option<String>,
    /// Generations JSONL; completed ids found here are not requested again.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Most requests in flight.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Stop sequence; repeat for several (default: the response marker).
    #[arg(long = "stop")]
    stop: Vec<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

pub fn generate(a: GenerateArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let prompts_path = required(a.prompts, config.paths.prompts.clone(), "prompts")?;
    let url = required(a.endpoint, config.endpoint.url.clone(), "endpoint")?;
    let out = required(a.out, config.paths.generations.clone(), "out")?;
    let e = &config.endpoint;
    let defaults = Policy::default();
    let policy = Policy {
        parallel: a.parallel.or(e.parallel).unwrap_or(defaults.parallel),
        max_attempts: a.max_attempts.or(e.max_attempts).unwrap_or(defaults.max_attempts),
        timeout_ms: a.timeout_ms.or(e.timeout_ms).unwrap_or(defaults.timeout_ms),
        ..defaults
    };
    let stop = if a.stop.is_empty() {
        e.stop.clone().unwrap_or_else(|| vec![RESPONSE_KEY.to_string()])
    } else {
        a.stop
    };
    let max_new_tokens = a.max_new_tokens.or(e.max_new_tokens).unwrap_or(256);
    let temperature = a.temperature.or(e.temperature).unwrap_or(0.0);

    let requests: Vec<GenerationRequest> = read_prompt_file(&prompts_path)?
        .into_iter()
        .map(|row| GenerationRequest {
            sample_id: row.sample_id,
            prompt: row.prompt,
            max_new_tokens,
            temperature,
            stop_sequences: stop.clone(),
        })
        .collect();
    let endpoint = Endpoint::from_env(url.clone());
    let outcome = generate_batch_blocking(&requests, &endpoint, &policy, &out)?;
    eprintln!(
        "generate: {} requests, {} resumed, {} sent, {} completed, {} failed",
        requests.len(),
        outcome.resumed,
        outcome.attempted,
        outcome.results.len(),
        outcome.failures.len()
    );

    let mut log = RunLog::default();
    log.inputs.push(prompts_path);
    log.outputs.push(out.clone());
    log.setting("endpoint", &url);
    log.setting("policy", policy);
    log.setting("max_new_tokens", max_new_tokens);
    log.setting("temperature", temperature);
    log.setting("stop", &stop);
    log.count("requests", requests.len());
    log.count("resumed", outcome.resumed);
    log.count("completed", outcome.results.len());
    log.count("failed", outcome.failures.len());
    if !outcome.is_complete() {
        let failures = citegen_client::failures_path(&out);
        eprintln!("generate: failures written to {}", failures.display());
        log.outputs.push(failures);
        log.exit_code = 2;
    }
    log.manifest_path = Some(run_manifest_path(&out));
    Ok(log)
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generations JSONL written by `generate`.
    #[arg(long, alias = "generations")]
    generated: Option<PathBuf>,
    /// Dataset JSONL holding the reference citation texts.
    #[arg(long, alias = "references")]
    dataset: Option<PathBuf>,
    /// Model name shown in the results table.
    #[arg(long, default_value = "model")]
    label: String,
    /// EvalReport JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(serde::Deserialize)]
struct GenerationRow {
    sample_id: String,
    text: String,
}

pub fn evaluate(a: EvaluateArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let generations = required(a.generated, config.paths.generations.clone(), "generated")?;
    let references = required(a.dataset, config.paths.dataset.clone(), "dataset")?;
    let out = match (a.out, &config.paths.reports) {
        (Some(out), _) => out,
        (None, Some(dir)) => dir.join(format!("{}.report.json", a.label)),
        (None, None) => return Err(invalid("missing --out (no reports path in the config file either)")),
    };
    let refs: BTreeMap<String, String> = read_dataset(&references)?
        .into_iter()
        .map(|s| (s.sample_id, s.citation_text))
        .collect();
    let rows: Vec<GenerationRow> = jsonl::read_jsonl(&generations)?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    let mut unmatched = 0usize;
    for row in rows {
        if !seen.insert(row.sample_id.clone()) {
            return Err(invalid(format!(
                "{}: duplicate sample_id {}",
                generations.display(),
                row.sample_id
            )));
        }
        match refs.get(&row.sample_id) {
            Some(reference) => pairs.push(EvalPair {
                sample_id: row.sample_id,
                candidate: row.text,
                reference: reference.clone(),
            }),
            None => unmatched += 1,
        }
    }
    pairs.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    let missing = refs.len() - pairs.len();
    let report = evaluate_corpus(&a.label, &pairs)?;
    write_text(&out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    print!("{}", render_results_table(&[(report.label.clone(), report.corpus)]));
    if missing > 0 || unmatched > 0 {
        eprintln!("evaluate: {missing} references without a generation, {unmatched} generations without a reference");
    }

    let mut log = RunLog {
        inputs: vec![generations, references],
        outputs: vec![out.clone()],
        ..RunLog::default()
    };
    log.setting("label", &a.label);
    log.count("pairs", report.n_pairs);
    log.count("references_without_generation", missing);
    log.count("generations_without_reference", unmatched);
    log.count("corpus", report.corpus);
    log.manifest_path = Some(run_manifest_path(&out));
    Ok(log)
}

// ---------------------------------------------------------------- report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// EvalReport JSON files, one table row each.
    #[arg(long = "report", value_name = "FILE", required = true)]
    reports: Vec<PathBuf>,
    /// Write the table here as well as to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(a: ReportArgs, config: &PipelineConfig) -> anyhow::Result<RunLog> {
    let mut rows = Vec::new();
    for path in &a.reports {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("{}: not an evaluation report: {e}", path.display())))?;
        rows.push((report.label, report.corpus));
    }
    let table = render_results_table(&rows);
    print!("{table}");
    let out = a
        .out
        .or_else(|| config.paths.reports.as_ref().map(|d| d.join("results.txt")));
    let mut log = RunLog::default();
    if let Some(out) = &out {
        write_text(out, &table)?;
        log.outputs.push(out.clone());
        log.manifest_path = Some(run_manifest_path(out));
    }
    log.count("rows", rows.len());
    log.inputs = a.reports;
    Ok(log)
}

// ---------------------------------------------------------------- numerics

#[derive(Debug, Args)]
pub struct NumericsArgs {
    #[command(subcommand)]
    command: NumericsCommand,
}

#[derive(Debug, Subcommand)]
enum NumericsCommand {
    /// Print the quantile bins for n-bit quantization.
    QuantileMap {
        #[arg(long, default_value_t = 4)]
        bits: u32,
        /// Bins before rescaling to [-1, 1].
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize a diagonal quadratic and print the trajectory as CSV.
    Optimize {
        #[arg(long, value_enum, default_value_t = ObjectiveKind::Quad)]
        objective: ObjectiveKind,
        /// Starting weights, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        w0: Vec<f64>,
        /// Curvatures c_i of sum c_i w_i^2 (default 1 for every weight).
        #[arg(long, value_delimiter = ',')]
        curvature: Vec<f64>,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
        #[arg(long, default_value_t = 0.999)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-8)]
        eps: f64,
        #[arg(long, default_value_t = 0.0)]
        weight_decay: f64,
        #[arg(long, value_enum, default_value_t = Rule::PaperAdam)]
        rule: Rule,
        /// Warmup steps; enables the linear schedule peaking at --lr.
        #[arg(long)]
        warmup: Option<u64>,
        /// Schedule length (default: --steps).
        #[arg(long)]
        total: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the learning-rate schedule as CSV.
    LrSchedule {
        #[arg(long, default_value_t = 3e-4)]
        base_lr: f64,
        #[arg(long, default_value_t = 100)]
        warmup: u64,
        #[arg(long, default_value_t = 1100)]
        total: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveKind {
    /// sum_i c_i w_i^2
    Quad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rule {
    PaperAdam,
    StandardAdam,
}

fn emit(out: Option<&PathBuf>, text: &str, log: &mut RunLog) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            write_text(path, text)?;
            log.outputs.push(path.clone());
            log.manifest_path = Some(run_manifest_path(path));
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn numerics(a: NumericsArgs) -> anyhow::Result<RunLog> {
    let mut log = RunLog::default();
    match a.command {
        NumericsCommand::QuantileMap { bits, raw, out } => {
            let bins = if raw {
                raw_quantile_bins(bits)?
            } else {
                build_quantile_map(bits)?.bins
            };
            let mut text = String::from("index,value\n");
            for (i, b) in bins.iter().enumerate() {
                text.push_str(&format!("{i},{b:.17e}\n"));
            }
            log.setting("bits", bits);
            log.setting("raw", raw);
            log.count("bins", bins.len());
            emit(out.as_ref(), &text, &mut log)?;
        }
        NumericsCommand::Optimize {
            objective: ObjectiveKind::Quad,
            w0,
            curvature,
            steps,
            lr,
            beta,
            gamma,
            eps,
            weight_decay,
            rule,
            warmup,
            total,
            out,
        } => {
            let curvature = if curvature.is_empty() {
                vec![1.0; w0.len()]
            } else {
                curvature
            };
            if curvature.len() != w0.len() {
                bail!(invalid("--curvature needs one value per --w0 weight"));
            }
            let config = AdamConfig {
                beta,
                gamma,
                lr,
                eps,
                weight_decay,
                rule: match rule {
                    Rule::PaperAdam => MomentumRule::PaperAdam,
                    Rule::StandardAdam => MomentumRule::StandardAdam,
                },
            };
            let schedule = warmup.map(|warmup_steps| LrSchedule {
                base_lr: lr,
                warmup_steps,
                total_steps: total.unwrap_or(steps),
            });
            let state = OptimizerState::new(w0, config)?;
            let (trajectory, end) = minimize(&Quadratic::diagonal(curvature), steps, state, schedule.as_ref())?;
            log.setting("config", config);
            log.setting("schedule", schedule);
            log.setting("steps", steps);
            log.count("final_weights", &end.weights);
            log.count("final_value", trajectory.last().value);
            emit(out.as_ref(), &trajectory.to_csv(), &mut log)?;
        }
        NumericsCommand::LrSchedule {
            base_lr,
            warmup,
            total,
            out,
        } => {
            let schedule = LrSchedule {
                base_lr,
                warmup_steps: warmup,
                total_steps: total,
            };
            let mut text = String::from("step,lr\n");
            for step in 0..=total {
                text.push_str(&format!("{step},{:e}\n", lr_at(&schedule, step)?));
            }
            log.setting("schedule", schedule);
            emit(out.as_ref(), &text, &mut log)?;
        }
    }
    Ok(log)
}
