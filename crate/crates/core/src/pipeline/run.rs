use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use base64::Engine;
use rayon::prelude::*;
use regex::Regex;

use crate::attention::{
    compute_cam, compute_channel_weights, heatmap_from_reduced, normalize_heatmap,
    resize_bilinear, AttentionHeatmap, FeatureStack, GradientStack, Grid, HeatmapSource,
};
use crate::backends::{
    AttentionArtifactRequest, AttentionArtifacts, Backends, LlmGenerateRequest, VqaAnswerRequest,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, score_attention, EvaluationScores};
use crate::reasoning::{build_chain, select_flow, ReasoningChain, ReasoningContext};
use crate::reformulation::{reformulate, ReformulatedQuery};
use crate::regions::{extract_regions, RegionBox};
use crate::resources::TextResources;

use super::config::{PipelineOptions, Preset};
use super::manifest::Sample;
use super::prompt::{attention_summary, UnifiedContext};
use super::record::{Degradation, HeatmapSummary, PipelineRecord, StageError, StageTimings};

/// Shared, read-only inputs of a run.
#[derive(Clone, Copy)]
pub struct PipelineContext<'a> {
    pub backends: &'a Backends,
    pub resources: &'a TextResources,
    pub options: &'a PipelineOptions,
}

/// Placeholder the unified prompt uses when the VQA model gave no answer.
pub const NO_INITIAL_ANSWER: &str = "(unavailable)";
pub const DEFAULT_PATHOLOGY_CONFIDENCE: f64 = 0.5;

/// `confidence 0.xx` inside a VQA answer, or the default.
pub fn pathology_confidence(answer: &str) -> f64 {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)confidence\s*[:=]?\s*([0-9]*\.?[0-9]+)\s*(%?)").unwrap()
    });
    re.captures(answer)
        .and_then(|c| {
            let v: f64 = c[1].parse().ok()?;
            let v = if &c[2] == "%" { v / 100.0 } else { v };
            (0.0..=1.0).contains(&v).then_some(v)
        })
        .unwrap_or(DEFAULT_PATHOLOGY_CONFIDENCE)
}

/// Number of alternatives named in an answer: the part before any
/// confidence clause, split on `or`, `/` and `;`.
pub fn candidate_count(answer: &str) -> usize {
    let lower = answer.to_lowercase();
    let head = lower.split("confidence").next().unwrap_or("");
    let head = head.trim().trim_end_matches(',').trim();
    let n = head
        .split(';')
        .flat_map(|p| p.split('/'))
        .flat_map(|p| p.split(" or "))
        .filter(|p| p.chars().any(char::is_alphanumeric))
        .count();
    n.max(1)
}

struct LoadedImage {
    b64: String,
    height: usize,
    width: usize,
}

fn load_image(path: &Path) -> Result<LoadedImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)?;
    Ok(LoadedImage {
        b64: base64::engine::general_purpose::STANDARD.encode(&bytes),
        height: img.height() as usize,
        width: img.width() as usize,
    })
}

struct Attention {
    full: AttentionHeatmap<f64>,
    reduced: Grid<f64>,
}

fn enhanced(
    features: &FeatureStack<f64>,
    gradients: &GradientStack<f64>,
    h: usize,
    w: usize,
) -> Result<Attention> {
    if features.shape() != gradients.shape() {
        return Err(Error::invalid("feature and gradient shapes differ"));
    }
    let weights = compute_channel_weights(gradients)?;
    let cam = compute_cam(features, &weights)?;
    let full = normalize_heatmap(&resize_bilinear(&cam, h, w)?)?;
    Ok(Attention { full, reduced: cam })
}

/// Channel-mean activation map, used when gradients are unusable.
fn basic_from_features(features: &FeatureStack<f64>, h: usize, w: usize) -> Result<Attention> {
    let k = features.channels();
    let cam = compute_cam(features, &vec![1.0 / k as f64; k])?;
    let full = normalize_heatmap(&resize_bilinear(&cam, h, w)?)?
        .with_source(HeatmapSource::BasicGradcam);
    Ok(Attention { full, reduced: cam })
}

struct Recorder<'a> {
    sample: &'a str,
    preset: &'a str,
    record_timings: bool,
    errors: Vec<StageError>,
}

impl Recorder<'_> {
    fn elapsed(&self, start: Instant) -> f64 {
        if self.record_timings {
            start.elapsed().as_secs_f64() * 1000.0
        } else {
            0.0
        }
    }

    fn fail(&mut self, stage: &str, message: impl ToString) {
        let message = message.to_string();
        tracing::warn!(sample = self.sample, preset = self.preset, stage, %message, "stage failed");
        self.errors.push(StageError {
            stage: stage.to_string(),
            message,
        });
    }

    fn log(&self, stage: &str, ms: f64, degradation: Degradation) {
        tracing::info!(
            sample = self.sample,
            preset = self.preset,
            stage,
            duration_ms = ms,
            degradation = degradation.as_str(),
            "stage done"
        );
    }
}

/// Runs every enabled stage for one sample. Never fails: problems are
/// recorded as degradation and stage errors inside the record.
pub fn run_sample(sample: &Sample, preset: &Preset, ctx: &PipelineContext<'_>) -> PipelineRecord {
    let total_start = Instant::now();
    let opts = ctx.options;
    let res = ctx.resources;
    let flags = preset.flags;
    let mut rec = Recorder {
        sample: &sample.id,
        preset: &preset.name,
        record_timings: opts.record_timings,
        errors: Vec::new(),
    };
    let mut timings = StageTimings::default();
    let mut degradation = Degradation::None;

    let image = match load_image(&sample.image) {
        Ok(i) => Some(i),
        Err(e) => {
            rec.fail("image", e);
            None
        }
    };

    // 1. question reformulation
    let mut reformulation: Option<ReformulatedQuery> = None;
    if flags.query_reformulation {
        let start = Instant::now();
        match reformulate(
            &sample.question,
            ctx.backends.reformulator.as_ref(),
            res,
            &opts.generation,
            &opts.reformulation_quality,
        ) {
            Ok(q) => {
                if let Some(f) = &q.fallback {
                    rec.fail("reformulation", f);
                }
                reformulation = Some(q);
            }
            Err(e) => rec.fail("reformulation", e),
        }
        let ms = rec.elapsed(start);
        timings.reformulation = Some(ms);
        rec.log("reformulation", ms, degradation);
    }
    let vqa_question = reformulation
        .as_ref()
        .filter(|q| q.fallback.is_none())
        .map(|q| q.reformulated.as_str())
        .unwrap_or(&sample.question);

    // 2. initial answer
    let start = Instant::now();
    let initial_answer = image.as_ref().and_then(|img| {
        let mut req = VqaAnswerRequest::new(img.b64.clone(), vqa_question);
        req.max_answer_tokens = opts.max_answer_tokens;
        match ctx.backends.vqa.vqa_answer(&req) {
            Ok(r) => Some(r.answer),
            Err(e) => {
                rec.fail("vqa_answer", e);
                None
            }
        }
    });
    let ms = rec.elapsed(start);
    timings.vqa_answer = Some(ms);
    rec.log("vqa_answer", ms, degradation);

    // 3. attention with its fallback ladder
    let mut attention: Option<Attention> = None;
    if flags.gradcam {
        let start = Instant::now();
        match &image {
            None => degradation = Degradation::AttentionFree,
            Some(img) => {
                let req = AttentionArtifactRequest::new(img.b64.clone(), vqa_question);
                let (h, w) = (img.height, img.width);
                match ctx.backends.vqa.attention_artifacts(&req) {
                    Ok(AttentionArtifacts::Gradients {
                        features,
                        gradients,
                        target_layer,
                        ..
                    }) => match enhanced(&features, &gradients, h, w) {
                        Ok(mut a) => {
                            a.full = a.full.with_target_layer(target_layer);
                            attention = Some(a);
                        }
                        Err(e) => {
                            rec.fail("attention", format!("enhanced grad-cam: {e}"));
                            match basic_from_features(&features, h, w) {
                                Ok(mut a) => {
                                    a.full = a.full.with_target_layer(target_layer);
                                    attention = Some(a);
                                    degradation = Degradation::BasicGradcam;
                                }
                                Err(e) => {
                                    rec.fail("attention", format!("basic grad-cam: {e}"));
                                    degradation = Degradation::AttentionFree;
                                }
                            }
                        }
                    },
                    Ok(AttentionArtifacts::Heatmap {
                        heatmap,
                        target_layer,
                        ..
                    }) => match heatmap_from_reduced(&heatmap, h, w) {
                        Ok(full) => {
                            let full = full.with_target_layer(target_layer.unwrap_or_default());
                            attention = Some(Attention {
                                full,
                                reduced: heatmap,
                            });
                            degradation = Degradation::BasicGradcam;
                        }
                        Err(e) => {
                            rec.fail("attention", format!("basic grad-cam: {e}"));
                            degradation = Degradation::AttentionFree;
                        }
                    },
                    Err(e) => {
                        rec.fail("attention", e);
                        degradation = Degradation::AttentionFree;
                    }
                }
            }
        }
        let ms = rec.elapsed(start);
        timings.attention = Some(ms);
        rec.log("attention", ms, degradation);
    }
    let heatmap = attention
        .as_ref()
        .map(|a| HeatmapSummary::new(&a.full, &a.reduced));

    // 4. regions
    let mut regions: Vec<RegionBox<f64>> = Vec::new();
    if let Some(a) = &attention {
        let start = Instant::now();
        match extract_regions(&a.full, &opts.extraction) {
            Ok(r) => regions = r,
            Err(e) => rec.fail("regions", e),
        }
        let ms = rec.elapsed(start);
        timings.regions = Some(ms);
        rec.log("regions", ms, degradation);
    }
    let summary = attention_summary(heatmap.as_ref(), &regions);

    // 5. reasoning chain
    let mut chain: Option<ReasoningChain> = None;
    if flags.chain_of_thought {
        let start = Instant::now();
        let answer = initial_answer.as_deref().unwrap_or(NO_INITIAL_ANSWER);
        let flow = select_flow(
            score_attention(&regions),
            initial_answer
                .as_deref()
                .map(pathology_confidence)
                .unwrap_or(DEFAULT_PATHOLOGY_CONFIDENCE),
            initial_answer.as_deref().map(candidate_count).unwrap_or(1),
            &opts.flow_thresholds,
        );
        let rctx = ReasoningContext {
            question: vqa_question,
            initial_answer: answer,
            regions: &regions,
            attention_summary: &summary,
        };
        match build_chain(
            &rctx,
            flow,
            ctx.backends.integrator.as_ref(),
            res,
            &opts.generation,
            opts.step_weights,
        ) {
            Ok(c) => {
                if let Some(d) = &c.degradation {
                    rec.fail("reasoning", d);
                }
                chain = Some(c);
            }
            Err(e) => rec.fail("reasoning", e),
        }
        let ms = rec.elapsed(start);
        timings.reasoning = Some(ms);
        rec.log("reasoning", ms, degradation);
    }

    // 6. unified answer
    let start = Instant::now();
    let context = UnifiedContext {
        reformulated: reformulation.as_ref().map(|q| q.reformulated.as_str()),
        attention: flags.gradcam.then(|| summary.clone()),
        regions: flags
            .bounding_boxes
            .then_some((regions.as_slice(), flags.unified_prompt_includes_boxes)),
        chain: chain.as_ref(),
    }
    .render();
    let mut unified_fallback = false;
    let unified = res
        .templates
        .unified
        .render(&[
            ("question", sample.question.as_str()),
            (
                "initial_answer",
                initial_answer.as_deref().unwrap_or(NO_INITIAL_ANSWER),
            ),
            ("context", &context),
        ])
        .map_err(|e| e.to_string())
        .and_then(|prompt| {
            let images = image.as_ref().map(|i| vec![i.b64.clone()]).unwrap_or_default();
            let req = LlmGenerateRequest::with_params(prompt, images, &opts.generation);
            ctx.backends
                .integrator
                .llm_generate(&req)
                .map_err(|e| e.to_string())
        })
        .and_then(|r| {
            let t = r.text.trim().to_string();
            if t.is_empty() {
                Err("empty unified answer".to_string())
            } else {
                Ok(t)
            }
        });
    let unified_answer = match unified {
        Ok(t) => t,
        Err(e) => {
            rec.fail("unified", e);
            unified_fallback = true;
            initial_answer.clone().unwrap_or_default()
        }
    };
    let ms = rec.elapsed(start);
    timings.unified = Some(ms);
    rec.log("unified", ms, degradation);

    // 7. evaluation
    let start = Instant::now();
    let reasoning_confidence = chain
        .as_ref()
        .filter(|c| !c.is_placeholder())
        .map(|c| c.overall_confidence)
        .unwrap_or(0.0);
    let scores = match evaluate(
        &unified_answer,
        &regions,
        reasoning_confidence,
        res,
        &opts.metric_weights,
    ) {
        Ok(s) => s,
        Err(e) => {
            rec.fail("evaluation", e);
            EvaluationScores::default()
        }
    };
    let ms = rec.elapsed(start);
    timings.evaluation = Some(ms);
    rec.log("evaluation", ms, degradation);
    timings.total = rec.elapsed(total_start);

    PipelineRecord {
        sample_id: sample.id.clone(),
        config: preset.name.clone(),
        flags,
        image: sample.image.clone(),
        question: sample.question.clone(),
        ground_truth: sample.ground_truth.clone(),
        reformulation,
        initial_answer,
        heatmap,
        regions,
        reasoning: chain,
        unified_answer,
        unified_fallback,
        scores,
        degradation,
        errors: rec.errors,
        timings,
    }
}

/// Records of one preset, ordered by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetRecords {
    pub preset: String,
    pub records: Vec<PipelineRecord>,
}

/// Every sample under every preset, on a pool of `workers` threads. Output
/// order is presets as given, then sample id, independent of `workers`.
pub fn run_ablation(
    samples: &[Sample],
    presets: &[Preset],
    ctx: &PipelineContext<'_>,
    workers: usize,
) -> Result<Vec<PresetRecords>> {
    if presets.is_empty() {
        return Err(Error::invalid("no presets to run"));
    }
    let mut ordered: Vec<&Sample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let jobs: Vec<(&Preset, &Sample)> = presets
        .iter()
        .flat_map(|p| ordered.iter().map(move |s| (p, *s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let records: Vec<PipelineRecord> =
        pool.install(|| jobs.par_iter().map(|(p, s)| run_sample(s, p, ctx)).collect());

    let mut out: Vec<PresetRecords> = presets
        .iter()
        .map(|p| PresetRecords {
            preset: p.name.clone(),
            records: Vec::with_capacity(ordered.len()),
        })
        .collect();
    for (i, r) in records.into_iter().enumerate() {
        out[i / ordered.len().max(1)].records.push(r);
    }
    Ok(out)
}
