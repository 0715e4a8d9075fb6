//! Instruction prompts for baseline and knowledge-graph-augmented runs.
//!
//! Prompts follow the Alpaca layout: a fixed preamble, `### Instruction:`,
//! `### Input:` holding labelled blocks, and `### Response:`. Every prompt is
//! fitted under `max_tokens - reserve_for_response` estimated tokens. When the
//! full text does not fit, content is cut in a fixed order (see [`Rung`]),
//! longest block first within a rung, until it does.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::CitationSample;
use crate::error::{Error, Result};
use crate::jsonl::{self, Manifest};
use crate::kg::{format_triplet, EnrichedSample, TripletSet};

pub const PREAMBLE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.";
pub const INSTRUCTION: &str = "Write a multi-sentence citation paragraph for the source paper that cites every target paper given in the input, describing how each target paper relates to the source paper.";
pub const RESPONSE_KEY: &str = "### Response:";

pub const DEFAULT_MAX_TOKENS: usize = 2048;
pub const DEFAULT_RESERVE: usize = 256;
/// The source abstract keeps at least this many estimated tokens while any
/// lower-priority content can still be cut.
pub const SOURCE_FLOOR_TOKENS: usize = 200;

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
    fn name(&self) -> String;
}

/// `ceil(chars / n)`; the default of four characters per token approximates
/// common subword tokenizers on English text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharsPerToken(pub usize);

impl Default for CharsPerToken {
    fn default() -> Self {
        CharsPerToken(4)
    }
}

impl TokenEstimator for CharsPerToken {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.0.max(1))
    }

    fn name(&self) -> String {
        format!("chars/{}", self.0)
    }
}

pub fn estimate_tokens(text: &str, estimator: &dyn TokenEstimator) -> usize {
    estimator.estimate(text)
}

#[derive(Clone)]
pub struct TokenBudget {
    pub max_tokens: usize,
    pub reserve_for_response: usize,
    pub estimator: Arc<dyn TokenEstimator>,
}

impl fmt::Debug for TokenBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenBudget")
            .field("max_tokens", &self.max_tokens)
            .field("reserve_for_response", &self.reserve_for_response)
            .field("estimator", &self.estimator.name())
            .finish()
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget::new(DEFAULT_MAX_TOKENS)
    }
}

impl TokenBudget {
    /// Budget with the default estimator. The response reserve is 256 tokens,
    /// shrunk to a quarter of `max_tokens` for small budgets.
    pub fn new(max_tokens: usize) -> Self {
        TokenBudget {
            max_tokens,
            reserve_for_response: DEFAULT_RESERVE.min(max_tokens / 4),
            estimator: Arc::new(CharsPerToken::default()),
        }
    }

    pub fn with_reserve(mut self, reserve: usize) -> Result<Self> {
        if reserve >= self.max_tokens {
            return Err(Error::InvalidBudget(format!(
                "reserve_for_response {reserve} must be below max_tokens {}",
                self.max_tokens
            )));
        }
        self.reserve_for_response = reserve;
        Ok(self)
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn prompt_limit(&self) -> usize {
        self.max_tokens.saturating_sub(self.reserve_for_response)
    }

    fn estimate(&self, text: &str) -> usize {
        self.estimator.estimate(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KgMode {
    /// One relation block per target section.
    PerSection,
    /// One relation block per target, sections merged.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptOptions {
    pub include_introduction_text: bool,
    pub include_conclusion_text: bool,
    /// Keep the header of relation blocks that render empty.
    pub show_empty_kg_blocks: bool,
    pub kg_mode: KgMode,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            include_introduction_text: false,
            include_conclusion_text: false,
            show_empty_kg_blocks: true,
            kg_mode: KgMode::PerSection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceSlot {
    Abstract,
    AbstractTriplets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSlot {
    Abstract,
    Introduction,
    Conclusion,
    AbstractTriplets,
    IntroductionTriplets,
    ConclusionTriplets,
    PooledTriplets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub preamble: String,
    pub instruction: String,
    pub source_slots: Vec<SourceSlot>,
    /// Rendered once per target, in target order.
    pub target_slots: Vec<TargetSlot>,
    pub response_key: String,
}

impl PromptTemplate {
    pub fn baseline(options: &PromptOptions) -> Self {
        let mut target_slots = vec![TargetSlot::Abstract];
        if options.include_introduction_text {
            target_slots.push(TargetSlot::Introduction);
        }
        if options.include_conclusion_text {
            target_slots.push(TargetSlot::Conclusion);
        }
        PromptTemplate {
            name: "baseline".into(),
            preamble: PREAMBLE.into(),
            instruction: INSTRUCTION.into(),
            source_slots: vec![SourceSlot::Abstract],
            target_slots,
            response_key: RESPONSE_KEY.into(),
        }
    }

    pub fn kg(options: &PromptOptions) -> Self {
        let mut template = PromptTemplate::baseline(options);
        template.name = "kg".into();
        template.source_slots.push(SourceSlot::AbstractTriplets);
        match options.kg_mode {
            KgMode::PerSection => template.target_slots.extend([
                TargetSlot::AbstractTriplets,
                TargetSlot::IntroductionTriplets,
                TargetSlot::ConclusionTriplets,
            ]),
            KgMode::Pooled => template.target_slots.push(TargetSlot::PooledTriplets),
        }
        template
    }
}

/// Cut order when a prompt is over budget, first to last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rung {
    TargetConclusionTriplets,
    TargetIntroductionTriplets,
    TargetAbstractTriplets,
    SourceAbstractTriplets,
    TargetConclusionText,
    TargetIntroductionText,
    TargetAbstracts,
    SourceAbstract,
    SourceAbstractBelowFloor,
}

impl Rung {
    pub const LADDER: [Rung; 9] = [
        Rung::TargetConclusionTriplets,
        Rung::TargetIntroductionTriplets,
        Rung::TargetAbstractTriplets,
        Rung::SourceAbstractTriplets,
        Rung::TargetConclusionText,
        Rung::TargetIntroductionText,
        Rung::TargetAbstracts,
        Rung::SourceAbstract,
        Rung::SourceAbstractBelowFloor,
    ];
}

/// A slot that kept less than it had. Lengths count characters for text slots
/// and triplets for relation slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub slot: String,
    pub original_len: usize,
    pub kept_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub sample_id: String,
    pub template_name: String,
    pub text: String,
    pub token_estimate: usize,
    pub truncations: Vec<Truncation>,
    pub gold_response: Option<String>,
}

enum Content {
    Text(Vec<char>),
    Triplets(Vec<String>),
}

struct Block {
    slot: String,
    label: String,
    content: Content,
    /// Length before any budget cut.
    full: usize,
    keep: usize,
    rung: Rung,
    /// Relation blocks may disappear entirely when empty.
    omit_when_empty: bool,
    /// Set once a budget cut leaves the block empty; the header goes too.
    collapsed: bool,
}

impl Block {
    fn text(slot: String, label: String, text: &str, rung: Rung) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let full = chars.len();
        Block {
            slot,
            label,
            content: Content::Text(chars),
            full,
            keep: full,
            rung,
            omit_when_empty: false,
            collapsed: false,
        }
    }

    fn triplets(
        slot: String,
        label: String,
        set: &TripletSet,
        triplet_budget: usize,
        rung: Rung,
        omit_when_empty: bool,
    ) -> Self {
        let items: Vec<String> = set.triplets.iter().take(triplet_budget).map(format_triplet).collect();
        let full = items.len();
        Block {
            slot,
            label,
            content: Content::Triplets(items),
            full,
            keep: full,
            rung,
            omit_when_empty,
            collapsed: false,
        }
    }

    fn render_into(&self, out: &mut String) -> bool {
        if self.keep == 0 && (self.omit_when_empty || self.collapsed) {
            return false;
        }
        out.push_str(&self.label);
        out.push_str(":\n");
        match &self.content {
            Content::Text(chars) => out.extend(&chars[..self.keep]),
            Content::Triplets(items) => out.push_str(&items[..self.keep].join("; ")),
        }
        true
    }
}

struct Draft<'a> {
    template: &'a PromptTemplate,
    blocks: Vec<Block>,
}

impl Draft<'_> {
    fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.template.preamble);
        out.push_str("\n\n### Instruction:\n");
        out.push_str(&self.template.instruction);
        out.push_str("\n\n### Input:\n");
        let mut first = true;
        let mut block_text = String::new();
        for block in &self.blocks {
            block_text.clear();
            if block.render_into(&mut block_text) {
                if !first {
                    out.push_str("\n\n");
                }
                out.push_str(&block_text);
                first = false;
            }
        }
        out.push_str("\n\n");
        out.push_str(&self.template.response_key);
        out.push('\n');
        out
    }

    fn set_cap(&mut self, members: &[usize], caps: &[usize], cap: usize) {
        for (&i, &original) in members.iter().zip(caps) {
            let block = &mut self.blocks[i];
            block.keep = original.min(cap);
            block.collapsed = block.rung < Rung::TargetAbstracts && block.keep == 0;
        }
    }

    fn set_all(&mut self, keep: &[usize], collapsed: bool) {
        for (b, &k) in self.blocks.iter_mut().zip(keep) {
            b.keep = k;
            b.collapsed = collapsed && b.rung < Rung::TargetAbstracts && k == 0;
        }
    }

    fn fit(&mut self, budget: &TokenBudget, sample_id: &str) -> Result<()> {
        let limit = budget.prompt_limit();
        if budget.estimate(&self.render()) <= limit {
            return Ok(());
        }
        let saved: Vec<usize> = self.blocks.iter().map(|b| b.keep).collect();
        self.set_all(&vec![0; saved.len()], true);
        let skeleton = budget.estimate(&self.render());
        if skeleton > limit {
            return Err(Error::BudgetExhausted {
                sample_id: sample_id.to_string(),
                limit,
                needed: skeleton,
            });
        }
        self.set_all(&saved, false);

        for rung in Rung::LADDER {
            let members: Vec<usize> = self
                .blocks
                .iter()
                .enumerate()
                .filter(|(_, b)| {
                    b.rung == rung || (rung == Rung::SourceAbstractBelowFloor && b.rung == Rung::SourceAbstract)
                })
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                continue;
            }
            let caps: Vec<usize> = members.iter().map(|&i| self.blocks[i].keep).collect();
            let upper = caps.iter().copied().max().unwrap_or(0);
            let lower = match rung {
                Rung::SourceAbstract => self.source_floor(&members, budget).min(upper),
                _ => 0,
            };
            self.set_cap(&members, &caps, lower);
            if budget.estimate(&self.render()) > limit {
                continue;
            }
            // Largest cap that still fits; cutting the longest blocks first.
            let (mut lo, mut hi) = (lower, upper);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                self.set_cap(&members, &caps, mid);
                if budget.estimate(&self.render()) <= limit {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            self.set_cap(&members, &caps, lo);
            return Ok(());
        }
        unreachable!("an empty input section fits once the skeleton fits")
    }

    /// Characters of the source abstract needed to reach the floor.
    fn source_floor(&self, members: &[usize], budget: &TokenBudget) -> usize {
        let Some(&i) = members.first() else { return 0 };
        let Content::Text(chars) = &self.blocks[i].content else {
            return 0;
        };
        let (mut lo, mut hi) = (0usize, chars.len());
        if budget.estimate(&chars.iter().collect::<String>()) < SOURCE_FLOOR_TOKENS {
            return chars.len();
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let prefix: String = chars[..mid].iter().collect();
            if budget.estimate(&prefix) >= SOURCE_FLOOR_TOKENS {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    fn into_instance(self, sample: &CitationSample, budget: &TokenBudget) -> PromptInstance {
        let text = self.render();
        let truncations = self
            .blocks
            .iter()
            .filter(|b| b.keep < b.full)
            .map(|b| Truncation {
                slot: b.slot.clone(),
                original_len: b.full,
                kept_len: b.keep,
            })
            .collect();
        PromptInstance {
            sample_id: sample.sample_id.clone(),
            template_name: self.template.name.clone(),
            token_estimate: budget.estimate(&text),
            text,
            truncations,
            gold_response: Some(sample.citation_text.clone()),
        }
    }
}

fn build_blocks(
    template: &PromptTemplate,
    sample: &CitationSample,
    enriched: Option<&EnrichedSample>,
    triplet_budget: usize,
    options: &PromptOptions,
) -> Vec<Block> {
    let omit = !options.show_empty_kg_blocks;
    let mut blocks = Vec::new();
    for slot in &template.source_slots {
        match slot {
            SourceSlot::Abstract => blocks.push(Block::text(
                "source_abstract".into(),
                "Source abstract".into(),
                &sample.source_abstract,
                Rung::SourceAbstract,
            )),
            SourceSlot::AbstractTriplets => {
                if let Some(e) = enriched {
                    blocks.push(Block::triplets(
                        "source_abstract_triplets".into(),
                        "Source abstract relations".into(),
                        &e.source_abstract,
                        triplet_budget,
                        Rung::SourceAbstractTriplets,
                        omit,
                    ));
                }
            }
        }
    }
    for (k, target) in sample.targets.iter().enumerate() {
        let n = k + 1;
        let kg = enriched.and_then(|e| e.targets.get(k));
        for slot in &template.target_slots {
            let block = match slot {
                TargetSlot::Abstract => Block::text(
                    format!("target_{n}_abstract"),
                    format!("Target paper {n} abstract"),
                    &target.abstract_text,
                    Rung::TargetAbstracts,
                ),
                TargetSlot::Introduction => Block::text(
                    format!("target_{n}_introduction"),
                    format!("Target paper {n} introduction"),
                    target.introduction.as_deref().unwrap_or_default(),
                    Rung::TargetIntroductionText,
                ),
                TargetSlot::Conclusion => Block::text(
                    format!("target_{n}_conclusion"),
                    format!("Target paper {n} conclusion"),
                    target.conclusion.as_deref().unwrap_or_default(),
                    Rung::TargetConclusionText,
                ),
                triplet_slot => {
                    let Some(kg) = kg else { continue };
                    let (name, label, set, rung) = match triplet_slot {
                        TargetSlot::AbstractTriplets => (
                            "abstract_triplets",
                            "abstract relations",
                            kg.abstract_set.clone(),
                            Rung::TargetAbstractTriplets,
                        ),
                        TargetSlot::IntroductionTriplets => (
                            "introduction_triplets",
                            "introduction relations",
                            kg.introduction.clone(),
                            Rung::TargetIntroductionTriplets,
                        ),
                        TargetSlot::ConclusionTriplets => (
                            "conclusion_triplets",
                            "conclusion relations",
                            kg.conclusion.clone(),
                            Rung::TargetConclusionTriplets,
                        ),
                        _ => ("triplets", "relations", kg.pooled(), Rung::TargetAbstractTriplets),
                    };
                    Block::triplets(
                        format!("target_{n}_{name}"),
                        format!("Target paper {n} {label}"),
                        &set,
                        triplet_budget,
                        rung,
                        omit,
                    )
                }
            };
            blocks.push(block);
        }
    }
    blocks
}

fn render(
    template: &PromptTemplate,
    sample: &CitationSample,
    enriched: Option<&EnrichedSample>,
    budget: &TokenBudget,
    triplet_budget: usize,
    options: &PromptOptions,
) -> Result<PromptInstance> {
    let mut draft = Draft {
        template,
        blocks: build_blocks(template, sample, enriched, triplet_budget, options),
    };
    draft.fit(budget, &sample.sample_id)?;
    Ok(draft.into_instance(sample, budget))
}

pub fn render_baseline(
    sample: &CitationSample,
    budget: &TokenBudget,
    options: &PromptOptions,
) -> Result<PromptInstance> {
    render(&PromptTemplate::baseline(options), sample, None, budget, 0, options)
}

pub fn render_kg(
    sample: &EnrichedSample,
    budget: &TokenBudget,
    triplet_budget: usize,
    options: &PromptOptions,
) -> Result<PromptInstance> {
    render(
        &PromptTemplate::kg(options),
        &sample.sample,
        Some(sample),
        budget,
        triplet_budget,
        options,
    )
}

pub const PROMPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub sample_id: String,
    pub prompt: String,
    pub response: String,
}

/// Inference rows; reading a fine-tune file as prompts ignores `response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRow {
    pub sample_id: String,
    pub prompt: String,
}

pub fn emit_finetune_file(instances: &[PromptInstance], path: &Path) -> Result<Manifest> {
    let rows: Vec<FinetuneRow> = instances
        .iter()
        .map(|i| FinetuneRow {
            sample_id: i.sample_id.clone(),
            prompt: i.text.clone(),
            response: i.gold_response.clone().unwrap_or_default(),
        })
        .collect();
    let count = jsonl::write_jsonl(path, &rows)?;
    finish_manifest("finetune-prompts", count, instances, path)
}

pub fn emit_inference_file(instances: &[PromptInstance], path: &Path) -> Result<Manifest> {
    let rows: Vec<PromptRow> = instances
        .iter()
        .map(|i| PromptRow {
            sample_id: i.sample_id.clone(),
            prompt: i.text.clone(),
        })
        .collect();
    let count = jsonl::write_jsonl(path, &rows)?;
    finish_manifest("inference-prompts", count, instances, path)
}

fn finish_manifest(kind: &str, count: usize, instances: &[PromptInstance], path: &Path) -> Result<Manifest> {
    let truncated = instances.iter().filter(|i| !i.truncations.is_empty()).count();
    let max_tokens = instances.iter().map(|i| i.token_estimate).max().unwrap_or(0);
    let manifest = Manifest::for_file(kind, PROMPT_SCHEMA_VERSION, count, path)?
        .with_detail("truncated_instances", truncated)
        .with_detail("max_token_estimate", max_tokens);
    manifest.write_for(path)?;
    Ok(manifest)
}

pub fn read_finetune_file(path: &Path) -> Result<Vec<FinetuneRow>> {
    jsonl::read_jsonl(path)
}

pub fn read_prompt_file(path: &Path) -> Result<Vec<PromptRow>> {
    jsonl::read_jsonl(path)
}
