use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionHeatmap, Grid, HeatmapSource};
use crate::error::{Error, Result};
use crate::evaluation::EvaluationScores;
use crate::reasoning::ReasoningChain;
use crate::reformulation::ReformulatedQuery;
use crate::regions::RegionBox;

use super::config::PresetFlags;

/// Deepest attention fallback taken for a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    #[default]
    None,
    BasicGradcam,
    AttentionFree,
}

impl Degradation {
    pub fn as_str(self) -> &'static str {
        match self {
            Degradation::None => "none",
            Degradation::BasicGradcam => "basic_gradcam",
            Degradation::AttentionFree => "attention_free",
        }
    }
}

/// Compact heatmap description. `grid` is the normalized map at model
/// resolution; rendering upsamples it to the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub source: HeatmapSource,
    pub max_value: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub target_layer: String,
    pub grid: Vec<f64>,
}

impl HeatmapSummary {
    pub fn new(full: &AttentionHeatmap<f64>, reduced: &Grid<f64>) -> Self {
        let peak = reduced.max_value();
        let grid = if peak > 0.0 {
            reduced.values.iter().map(|v| (v / peak).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; reduced.values.len()]
        };
        Self {
            source: full.source,
            max_value: full.max_value(),
            image_height: full.height,
            image_width: full.width,
            grid_height: reduced.height,
            grid_width: reduced.width,
            target_layer: full.target_layer.clone(),
            grid,
        }
    }

    /// Rebuilds an image-resolution heatmap from the stored grid.
    pub fn heatmap(&self) -> Result<AttentionHeatmap<f64>> {
        let low = AttentionHeatmap {
            height: self.grid_height,
            width: self.grid_width,
            values: self.grid.clone(),
            normalized: true,
            source: self.source,
            target_layer: self.target_layer.clone(),
        };
        low.validate_normalized()?;
        crate::attention::upsample_heatmap(&low, self.image_height, self.image_width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// Milliseconds per stage; absent for stages that did not run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reformulation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vqa_answer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attention: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regions: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reasoning: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unified: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evaluation: Option<f64>,
    pub total: f64,
}

/// Everything produced for one sample under one preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub sample_id: String,
    pub config: String,
    pub flags: PresetFlags,
    pub image: PathBuf,
    pub question: String,
    #[serde(default)]
    pub ground_truth: String,
    pub reformulation: Option<ReformulatedQuery>,
    /// Absent when the VQA model could not answer.
    pub initial_answer: Option<String>,
    pub heatmap: Option<HeatmapSummary>,
    pub regions: Vec<RegionBox<f64>>,
    pub reasoning: Option<ReasoningChain>,
    pub unified_answer: String,
    /// The unified answer was unavailable and the initial answer stands in.
    #[serde(default)]
    pub unified_fallback: bool,
    pub scores: EvaluationScores,
    pub degradation: Degradation,
    #[serde(default)]
    pub errors: Vec<StageError>,
    pub timings: StageTimings,
}

impl PipelineRecord {
    /// Neither the VQA model nor the integrator produced any answer.
    pub fn total_outage(&self) -> bool {
        self.initial_answer.is_none() && self.unified_answer.trim().is_empty()
    }
}

pub fn persist_record(record: &PipelineRecord, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut json = serde_json::to_string_pretty(record).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_record(path: &Path) -> Result<PipelineRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `<outdir>/<preset>/<sample_id>.json`
pub fn record_path(outdir: &Path, record: &PipelineRecord) -> PathBuf {
    outdir
        .join(&record.config)
        .join(format!("{}.json", record.sample_id))
}
