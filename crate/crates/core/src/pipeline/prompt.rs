//! Section markers of the unified prompt and the builders that emit them.

use crate::attention::HeatmapSource;
use crate::reasoning::{regions_table, ReasoningChain};
use crate::regions::RegionBox;

use super::record::HeatmapSummary;

pub const REFORMULATED_MARKER: &str = "Reformulated question:";
pub const ATTENTION_MARKER: &str = "Attention summary:";
pub const REGIONS_MARKER: &str = "Highlighted regions:";
pub const REASONING_MARKER: &str = "Reasoning chain:";
/// Prefix of the coordinates appended to a region line.
pub const BOX_MARKER: &str = " box=(";

fn source_name(s: HeatmapSource) -> &'static str {
    match s {
        HeatmapSource::EnhancedGradcam => "enhanced_gradcam",
        HeatmapSource::BasicGradcam => "basic_gradcam",
        HeatmapSource::None => "none",
    }
}

/// One-line description of the attention evidence.
pub fn attention_summary(heatmap: Option<&HeatmapSummary>, regions: &[RegionBox<f64>]) -> String {
    match heatmap {
        None => "unavailable".to_string(),
        Some(h) => {
            let mean = crate::evaluation::score_attention(regions);
            format!(
                "source={} peak={:.3} regions={} mean_score={:.3}",
                source_name(h.source),
                h.max_value,
                regions.len(),
                mean
            )
        }
    }
}

/// Steps as `[i] kind (confidence): text`.
pub fn chain_lines(chain: &ReasoningChain) -> String {
    if chain.is_placeholder() {
        return "(unavailable)".to_string();
    }
    chain
        .steps
        .iter()
        .map(|s| format!("[{}] {} ({:.2}): {}", s.index, s.kind.as_str(), s.confidence, s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything the unified prompt knows beyond the question and initial answer.
#[derive(Default)]
pub struct UnifiedContext<'a> {
    pub reformulated: Option<&'a str>,
    pub attention: Option<String>,
    pub regions: Option<(&'a [RegionBox<f64>], bool)>,
    pub chain: Option<&'a ReasoningChain>,
}

impl UnifiedContext<'_> {
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if let Some(q) = self.reformulated {
            parts.push(format!("{REFORMULATED_MARKER} {q}"));
        }
        if let Some(a) = &self.attention {
            parts.push(format!("{ATTENTION_MARKER} {a}"));
        }
        if let Some((regions, with_boxes)) = self.regions {
            parts.push(format!("{REGIONS_MARKER}\n{}", regions_table(regions, with_boxes)));
        }
        if let Some(c) = self.chain {
            parts.push(format!(
                "{REASONING_MARKER} flow={} overall={:.3}\n{}",
                c.flow.as_str(),
                c.overall_confidence,
                chain_lines(c)
            ));
        }
        parts.join("\n")
    }
}
