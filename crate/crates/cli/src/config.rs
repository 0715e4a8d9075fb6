//! Pipeline configuration file (TOML).
//!
//! Every key is optional. A value given on the command line overrides the
//! file, and the file overrides the built-in default. Unknown keys are an
//! error.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub filter: Filter,
    pub split: Split,
    pub budget: Budget,
    pub prompt: Prompt,
    pub endpoint: EndpointConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub triplets: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub enriched: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Filter {
    pub fields_of_study: Option<Vec<String>>,
    pub max_samples_per_source: Option<usize>,
    pub scierc_relations_only: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Split {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub max_tokens: Option<usize>,
    pub reserve_for_response: Option<usize>,
    pub triplet_budget: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prompt {
    pub include_introduction_text: Option<bool>,
    pub include_conclusion_text: Option<bool>,
    pub show_empty_kg_blocks: Option<bool>,
    pub pooled_kg: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub url: Option<String>,
    pub parallel: Option<usize>,
    pub max_attempts: Option<u32>,
    pub max_new_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub stop: Option<Vec<String>>,
    pub timeout_ms: Option<u64>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
