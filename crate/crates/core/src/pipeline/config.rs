use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::GenerationParams;
use crate::error::{Error, Result};
use crate::evaluation::MetricWeights;
use crate::reasoning::{FlowThresholds, StepWeights};
use crate::reformulation::QualityWeights;
use crate::regions::ExtractionParams;

/// Stage switches for one configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetFlags {
    pub query_reformulation: bool,
    pub gradcam: bool,
    /// Put the region table into the unified prompt.
    pub bounding_boxes: bool,
    pub chain_of_thought: bool,
    /// Add box coordinates to the region table of the unified prompt.
    pub unified_prompt_includes_boxes: bool,
}

impl PresetFlags {
    pub fn validate(&self) -> Result<()> {
        if self.bounding_boxes && !self.gradcam {
            return Err(Error::Config("bounding_boxes requires gradcam".into()));
        }
        if self.chain_of_thought && !self.gradcam {
            return Err(Error::Config("chain_of_thought requires gradcam".into()));
        }
        if self.unified_prompt_includes_boxes && !self.bounding_boxes {
            return Err(Error::Config(
                "unified_prompt_includes_boxes requires bounding_boxes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub flags: PresetFlags,
}

/// The five built-in configurations, in progressive order.
pub fn builtin_presets() -> Vec<Preset> {
    let f = |q, g, b, c, i| PresetFlags {
        query_reformulation: q,
        gradcam: g,
        bounding_boxes: b,
        chain_of_thought: c,
        unified_prompt_includes_boxes: i,
    };
    vec![
        Preset {
            name: "basic".into(),
            flags: f(false, false, false, false, false),
        },
        Preset {
            name: "query_reform".into(),
            flags: f(true, true, false, false, false),
        },
        Preset {
            name: "bbox".into(),
            flags: f(true, true, true, false, false),
        },
        Preset {
            name: "cot".into(),
            flags: f(true, true, true, true, false),
        },
        Preset {
            name: "complete".into(),
            flags: f(true, true, true, true, true),
        },
    ]
}

/// Built-in presets plus any user-defined ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresetRegistry {
    presets: Vec<Preset>,
}

impl Default for PresetRegistry {
    fn default() -> Self {
        Self {
            presets: builtin_presets(),
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl PresetRegistry {
    pub fn with_custom(custom: &BTreeMap<String, PresetFlags>) -> Result<Self> {
        let mut reg = Self::default();
        for (name, flags) in custom {
            if !valid_name(name) {
                return Err(Error::Config(format!(
                    "preset name {name:?} must be non-empty ASCII letters, digits, '_' or '-'"
                )));
            }
            if reg.get(name).is_some() {
                return Err(Error::Config(format!("preset {name} is already defined")));
            }
            flags.validate().map_err(|e| Error::Config(format!("preset {name}: {e}")))?;
            reg.presets.push(Preset {
                name: name.clone(),
                flags: *flags,
            });
        }
        Ok(reg)
    }

    pub fn get(&self, name: &str) -> Option<&Preset> {
        self.presets.iter().find(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.presets.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn resolve(&self, name: &str) -> Result<&Preset> {
        self.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset {name:?}; valid presets: {}",
                self.names().join(", ")
            ))
        })
    }

    /// Resolves a list of names, rejecting duplicates.
    pub fn resolve_all(&self, names: &[String]) -> Result<Vec<Preset>> {
        if names.is_empty() {
            return Err(Error::Config("no presets selected".into()));
        }
        let mut out: Vec<Preset> = Vec::new();
        for n in names {
            let p = self.resolve(n)?;
            if out.iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("preset {n} listed twice")));
            }
            out.push(p.clone());
        }
        Ok(out)
    }

    pub fn all(&self) -> &[Preset] {
        &self.presets
    }
}

/// Settings shared by every preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub extraction: ExtractionParams,
    pub metric_weights: MetricWeights,
    pub step_weights: StepWeights,
    pub flow_thresholds: FlowThresholds,
    pub reformulation_quality: QualityWeights,
    pub generation: GenerationParams,
    pub max_answer_tokens: u32,
    /// When false every executed stage reports 0 ms, which makes records
    /// byte-reproducible.
    pub record_timings: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            extraction: ExtractionParams::default(),
            metric_weights: MetricWeights::default(),
            step_weights: StepWeights::default(),
            flow_thresholds: FlowThresholds::default(),
            reformulation_quality: QualityWeights::default(),
            generation: GenerationParams::default(),
            max_answer_tokens: 64,
            record_timings: true,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        self.extraction.validate()?;
        self.metric_weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.flow_thresholds.validate()?;
        self.reformulation_quality.validate()?;
        let g = &self.generation;
        if !(g.temperature >= 0.0 && g.top_p > 0.0 && g.top_p <= 1.0 && g.max_tokens > 0) {
            return Err(Error::Config(format!("invalid generation parameters {g:?}")));
        }
        if self.max_answer_tokens == 0 {
            return Err(Error::Config("max_answer_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_presets_are_coherent() {
        let reg = PresetRegistry::default();
        assert_eq!(reg.names(), ["basic", "query_reform", "bbox", "cot", "complete"]);
        for p in reg.all() {
            p.flags.validate().unwrap();
        }
        assert_eq!(reg.get("basic").unwrap().flags, PresetFlags::default());
        assert!(!reg.get("cot").unwrap().flags.unified_prompt_includes_boxes);
        assert!(reg.get("complete").unwrap().flags.unified_prompt_includes_boxes);
    }

    #[test]
    fn incoherent_flags_are_rejected() {
        let bad = PresetFlags {
            chain_of_thought: true,
            ..Default::default()
        };
        let custom = BTreeMap::from([("x".to_string(), bad)]);
        assert!(PresetRegistry::with_custom(&custom).is_err());
        let dup = BTreeMap::from([("cot".to_string(), PresetFlags::default())]);
        assert!(PresetRegistry::with_custom(&dup).is_err());
    }

    #[test]
    fn unknown_preset_lists_valid_ones() {
        let err = PresetRegistry::default().resolve("fancy").unwrap_err().to_string();
        assert!(err.contains("basic") && err.contains("complete"), "{err}");
    }

    #[test]
    fn options_reject_bad_weights() {
        let json = r#"{"metric_weights": {"terminology": 0.5}}"#;
        let o: PipelineOptions = serde_json::from_str(json).unwrap();
        assert!(o.validate().is_err());
        let json = r#"{"step_weights": [0.1, 0.1, 0.1, 0.1, 0.1, 0.4]}"#;
        assert!(serde_json::from_str::<PipelineOptions>(json).is_err());
        assert!(serde_json::from_str::<PipelineOptions>(r#"{"bogus": 1}"#).is_err());
    }
}
