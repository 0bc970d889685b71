//! Vocabularies, cue lists and prompt templates.
//!
//! Everything ships embedded in the binary and can be replaced file by file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoning::Flow;
use crate::text::{read_file, CueSets, Lexicon, StopWords, Template};

pub const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.txt");
pub const BUILTIN_STOPWORDS: &str = include_str!("../data/stopwords.txt");
pub const BUILTIN_STRUCTURE_CUES: &str = include_str!("../data/structure_cues.txt");
pub const BUILTIN_DISCOURSE_CUES: &str = include_str!("../data/discourse_cues.txt");
pub const BUILTIN_FLOW_GUIDANCE: &str = include_str!("../data/flow_guidance.txt");
pub const BUILTIN_COLORMAP: &str = include_str!("../data/colormap.txt");
pub const BUILTIN_REFORMULATE_TEMPLATE: &str = include_str!("../data/templates/reformulate.txt");
pub const BUILTIN_REASONING_TEMPLATE: &str = include_str!("../data/templates/reasoning.txt");
pub const BUILTIN_UNIFIED_TEMPLATE: &str = include_str!("../data/templates/unified.txt");

pub const REFORMULATE_PLACEHOLDERS: &[&str] = &["question"];
pub const REASONING_PLACEHOLDERS: &[&str] = &[
    "question",
    "initial_answer",
    "regions_table",
    "attention_summary",
    "flow_guidance",
];
pub const UNIFIED_PLACEHOLDERS: &[&str] = &["question", "initial_answer", "context"];

/// Optional file overrides for the embedded data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourcePaths {
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub structure_cues: Option<PathBuf>,
    pub discourse_cues: Option<PathBuf>,
    pub flow_guidance: Option<PathBuf>,
    pub reformulate_template: Option<PathBuf>,
    pub reasoning_template: Option<PathBuf>,
    pub unified_template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub reformulate: Template,
    pub reasoning: Template,
    pub unified: Template,
}

#[derive(Debug, Clone)]
pub struct TextResources {
    pub stopwords: StopWords,
    pub lexicon: Lexicon,
    /// Cues scored on reformulated questions.
    pub structure_cues: CueSets,
    /// Discourse elements scored on explanations.
    pub discourse_cues: CueSets,
    pub flow_guidance: BTreeMap<String, String>,
    pub templates: PromptTemplates,
}

/// Parses `[name]` sections whose bodies are free text.
pub fn parse_prose_sections(text: &str) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            out.entry(name.trim().to_string()).or_default();
        } else if let Some(name) = &current {
            let body = out.get_mut(name).unwrap();
            if !trimmed.is_empty() {
                if !body.is_empty() {
                    body.push(' ');
                }
                body.push_str(trimmed);
            }
        }
    }
    out
}

fn load_or(path: &Option<PathBuf>, builtin: &str) -> Result<String> {
    match path {
        Some(p) => read_file(p),
        None => Ok(builtin.to_string()),
    }
}

impl TextResources {
    pub fn builtin() -> Self {
        Self::load(&ResourcePaths::default()).expect("embedded resources are valid")
    }

    pub fn load(paths: &ResourcePaths) -> Result<Self> {
        let stopwords = StopWords::parse(&load_or(&paths.stopwords, BUILTIN_STOPWORDS)?);
        let lexicon = Lexicon::parse(&load_or(&paths.lexicon, BUILTIN_LEXICON)?, &stopwords);
        let structure_cues = CueSets::parse(&load_or(&paths.structure_cues, BUILTIN_STRUCTURE_CUES)?)?;
        let discourse_cues = CueSets::parse(&load_or(&paths.discourse_cues, BUILTIN_DISCOURSE_CUES)?)?;
        let flow_guidance = parse_prose_sections(&load_or(&paths.flow_guidance, BUILTIN_FLOW_GUIDANCE)?);

        let template = |p: &Option<PathBuf>, builtin: &str, allowed: &[&str]| -> Result<Template> {
            let t = Template::parse(load_or(p, builtin)?)
                .map_err(|e| Error::Config(format!("template: {e}")))?;
            t.check_placeholders(allowed)?;
            Ok(t)
        };
        let templates = PromptTemplates {
            reformulate: template(
                &paths.reformulate_template,
                BUILTIN_REFORMULATE_TEMPLATE,
                REFORMULATE_PLACEHOLDERS,
            )?,
            reasoning: template(
                &paths.reasoning_template,
                BUILTIN_REASONING_TEMPLATE,
                REASONING_PLACEHOLDERS,
            )?,
            unified: template(
                &paths.unified_template,
                BUILTIN_UNIFIED_TEMPLATE,
                UNIFIED_PLACEHOLDERS,
            )?,
        };

        let res = Self {
            stopwords,
            lexicon,
            structure_cues,
            discourse_cues,
            flow_guidance,
            templates,
        };
        res.validate()?;
        Ok(res)
    }

    fn validate(&self) -> Result<()> {
        if self.lexicon.is_empty() {
            return Err(Error::Config("lexicon is empty".into()));
        }
        if self.structure_cues.names().next().is_none() {
            return Err(Error::Config("structure cue file defines no sections".into()));
        }
        if self.discourse_cues.names().next().is_none() {
            return Err(Error::Config("discourse cue file defines no sections".into()));
        }
        for flow in Flow::ALL {
            if !self.flow_guidance.contains_key(flow.as_str()) {
                return Err(Error::Config(format!(
                    "flow guidance is missing section [{}]",
                    flow.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn guidance(&self, flow: Flow) -> &str {
        self.flow_guidance
            .get(flow.as_str())
            .map(String::as_str)
            .unwrap_or("")
    }
}
