//! Six-step chain-of-thought construction and confidence aggregation.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{GenerationParams, LlmBackend, LlmGenerateRequest};
use crate::error::{Error, Result};
use crate::regions::RegionBox;
use crate::resources::TextResources;
use crate::scalar::Scalar;

/// Confidence given to steps the model did not tag.
pub const DEFAULT_STEP_CONFIDENCE: f64 = 0.75;
pub const STEP_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    VisualObservation,
    AttentionAnalysis,
    MedicalContext,
    DifferentialAnalysis,
    EvidenceIntegration,
    ClinicalConclusion,
}

impl StepKind {
    pub const ALL: [StepKind; STEP_COUNT] = [
        StepKind::VisualObservation,
        StepKind::AttentionAnalysis,
        StepKind::MedicalContext,
        StepKind::DifferentialAnalysis,
        StepKind::EvidenceIntegration,
        StepKind::ClinicalConclusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::VisualObservation => "visual_observation",
            StepKind::AttentionAnalysis => "attention_analysis",
            StepKind::MedicalContext => "medical_context",
            StepKind::DifferentialAnalysis => "differential_analysis",
            StepKind::EvidenceIntegration => "evidence_integration",
            StepKind::ClinicalConclusion => "clinical_conclusion",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StepKind::VisualObservation => "visual observation",
            StepKind::AttentionAnalysis => "attention analysis",
            StepKind::MedicalContext => "medical context",
            StepKind::DifferentialAnalysis => "differential analysis",
            StepKind::EvidenceIntegration => "evidence integration",
            StepKind::ClinicalConclusion => "clinical conclusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    AttentionGuided,
    PathologyFocused,
    Comparative,
}

impl Flow {
    pub const ALL: [Flow; 3] = [Flow::AttentionGuided, Flow::PathologyFocused, Flow::Comparative];

    pub fn as_str(self) -> &'static str {
        match self {
            Flow::AttentionGuided => "attention_guided",
            Flow::PathologyFocused => "pathology_focused",
            Flow::Comparative => "comparative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowThresholds {
    pub attention_strength: f64,
    pub pathology_confidence: f64,
    pub candidate_count: usize,
}

impl Default for FlowThresholds {
    fn default() -> Self {
        Self {
            attention_strength: 0.5,
            pathology_confidence: 0.5,
            candidate_count: 2,
        }
    }
}

impl FlowThresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.attention_strength) || !unit(self.pathology_confidence) {
            return Err(Error::Config(format!(
                "flow thresholds must lie in [0, 1], got {self:?}"
            )));
        }
        if self.candidate_count < 1 {
            return Err(Error::Config("flow candidate_count threshold must be >= 1".into()));
        }
        Ok(())
    }
}

/// Picks the reasoning flow. Total over its inputs.
pub fn select_flow(
    attention_strength: f64,
    pathology_confidence: f64,
    candidate_count: usize,
    thresholds: &FlowThresholds,
) -> Flow {
    if attention_strength >= thresholds.attention_strength {
        Flow::AttentionGuided
    } else if pathology_confidence >= thresholds.pathology_confidence {
        Flow::PathologyFocused
    } else if candidate_count >= thresholds.candidate_count {
        Flow::Comparative
    } else {
        Flow::PathologyFocused
    }
}

/// Per-step weights; positive and summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StepWeights([f64; STEP_COUNT]);

impl StepWeights {
    pub fn new(w: [f64; STEP_COUNT]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(format!("step weights must be positive, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("step weights must sum to 1, got {sum}")));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Default for StepWeights {
    fn default() -> Self {
        default_step_weights()
    }
}

impl TryFrom<Vec<f64>> for StepWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let arr: [f64; STEP_COUNT] = v.try_into().map_err(|v: Vec<f64>| {
            Error::Config(format!("expected {STEP_COUNT} step weights, got {}", v.len()))
        })?;
        Self::new(arr)
    }
}

impl From<StepWeights> for Vec<f64> {
    fn from(w: StepWeights) -> Self {
        w.0.to_vec()
    }
}

/// Five evidence steps at 0.15 and the conclusion at 0.25.
pub fn default_step_weights() -> StepWeights {
    StepWeights([0.15, 0.15, 0.15, 0.15, 0.15, 0.25])
}

/// Normalized weighted harmonic mean `Σw / Σ(w/c)`.
pub fn aggregate_confidence<T: Scalar>(confidences: &[T], weights: &[T]) -> Result<T> {
    if confidences.is_empty() || confidences.len() != weights.len() {
        return Err(Error::invalid(format!(
            "need equally many confidences and weights, got {} and {}",
            confidences.len(),
            weights.len()
        )));
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for (&c, &w) in confidences.iter().zip(weights) {
        if !(c > T::zero()) || !c.is_finite() {
            return Err(Error::invalid(format!("confidence must be positive, got {c:?}")));
        }
        if !(w > T::zero()) || !w.is_finite() {
            return Err(Error::invalid(format!("weight must be positive, got {w:?}")));
        }
        num = num + w;
        den = den + w / c;
    }
    let (lo, hi) = confidences
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    // rounding can push the quotient one ulp outside the hull
    Ok((num / den).max(lo).min(hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub index: usize,
    pub kind: StepKind,
    pub text: String,
    pub confidence: f64,
    /// The model gave no usable confidence (or no section at all).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub defaulted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub steps: Vec<ReasoningStep>,
    pub flow: Flow,
    pub weights: StepWeights,
    pub overall_confidence: f64,
    /// Why the chain is partly or wholly placeholder content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<String>,
}

impl ReasoningChain {
    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != STEP_COUNT {
            return Err(Error::invalid(format!("chain has {} steps", self.steps.len())));
        }
        for (i, (s, kind)) in self.steps.iter().zip(StepKind::ALL).enumerate() {
            if s.index != i + 1 || s.kind != kind {
                return Err(Error::invalid(format!("step {} out of order", i + 1)));
            }
            if !(s.confidence > 0.0 && s.confidence <= 1.0) {
                return Err(Error::invalid(format!("step {} confidence {}", i + 1, s.confidence)));
            }
        }
        Ok(())
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.confidence).collect()
    }

    /// True when the backend produced no usable chain at all.
    pub fn is_placeholder(&self) -> bool {
        self.steps.iter().all(|s| s.defaulted && s.text.is_empty())
    }

    /// Placeholder steps at the default confidence.
    pub fn placeholder(flow: Flow, weights: StepWeights, reason: impl Into<String>) -> Self {
        let steps = StepKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &kind)| ReasoningStep {
                index: i + 1,
                kind,
                text: String::new(),
                confidence: DEFAULT_STEP_CONFIDENCE,
                defaulted: true,
            })
            .collect();
        Self {
            steps,
            flow,
            weights,
            overall_confidence: DEFAULT_STEP_CONFIDENCE,
            degradation: Some(reason.into()),
        }
    }
}

pub struct ReasoningContext<'a> {
    pub question: &'a str,
    pub initial_answer: &'a str,
    pub regions: &'a [RegionBox<f64>],
    pub attention_summary: &'a str,
}

/// One line per region, `r<rank> score=<s> area=<n>px`, optionally with the
/// box as `box=(x, y, w, h)`.
pub fn regions_table(regions: &[RegionBox<f64>], with_boxes: bool) -> String {
    if regions.is_empty() {
        return "(no regions)".to_string();
    }
    regions
        .iter()
        .map(|r| {
            let mut line = format!("r{} score={:.3} area={}px", r.rank, r.score, r.area_px);
            if with_boxes {
                line.push_str(&format!(" box=({}, {}, {}, {})", r.x, r.y, r.width, r.height));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[\s*#>-]*step\s+([1-6])\b[^:\n]*:[\s*]*(.*)$").unwrap())
}

fn confidence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\**confidence\**\s*[:=]\s*\**\s*([0-9]*\.?[0-9]+)\s*(%?)\**").unwrap()
    })
}

struct ParsedStep {
    text: String,
    confidence: Option<f64>,
}

/// Parses `Step N (...): text ... confidence: 0.xx` sections. The first
/// occurrence of each step number wins.
fn parse_sections(reply: &str) -> [Option<ParsedStep>; STEP_COUNT] {
    let headers: Vec<_> = header_re().captures_iter(reply).collect();
    let mut out: [Option<ParsedStep>; STEP_COUNT] = Default::default();
    for (i, cap) in headers.iter().enumerate() {
        let idx: usize = cap[1].parse().unwrap();
        let whole = cap.get(0).unwrap();
        let body_start = cap.get(2).unwrap().start();
        let body_end = headers
            .get(i + 1)
            .map(|c| c.get(0).unwrap().start())
            .unwrap_or(reply.len());
        debug_assert!(whole.start() <= body_start);
        let body = &reply[body_start..body_end];
        if out[idx - 1].is_some() {
            continue;
        }
        let confidence = confidence_re().captures_iter(body).last().and_then(|c| {
            let v: f64 = c[1].parse().ok()?;
            let v = if &c[2] == "%" { v / 100.0 } else { v };
            (v > 0.0 && v <= 1.0).then_some(v)
        });
        let text = confidence_re()
            .replace_all(body, "")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        out[idx - 1] = Some(ParsedStep { text, confidence });
    }
    out
}

/// Turns a raw model reply into a chain, defaulting what is missing.
pub fn parse_chain(reply: &str, flow: Flow, weights: StepWeights) -> ReasoningChain {
    let parsed = parse_sections(reply);
    let mut missing = Vec::new();
    let steps: Vec<ReasoningStep> = StepKind::ALL
        .iter()
        .zip(parsed)
        .enumerate()
        .map(|(i, (&kind, p))| {
            let (text, confidence) = match p {
                Some(p) => (p.text, p.confidence),
                None => (String::new(), None),
            };
            if confidence.is_none() {
                missing.push(i + 1);
            }
            ReasoningStep {
                index: i + 1,
                kind,
                text,
                confidence: confidence.unwrap_or(DEFAULT_STEP_CONFIDENCE),
                defaulted: confidence.is_none(),
            }
        })
        .collect();
    let cs: Vec<f64> = steps.iter().map(|s| s.confidence).collect();
    let overall = aggregate_confidence(&cs, weights.as_slice())
        .expect("confidences and weights are positive");
    let degradation = (!missing.is_empty()).then(|| {
        format!(
            "default confidence for step(s) {}",
            missing.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        )
    });
    ReasoningChain {
        steps,
        flow,
        weights,
        overall_confidence: overall,
        degradation,
    }
}

/// Asks the backend for all six steps in one call. Backend failure yields a
/// placeholder chain rather than an error.
pub fn build_chain(
    ctx: &ReasoningContext<'_>,
    flow: Flow,
    backend: &dyn LlmBackend,
    res: &TextResources,
    params: &GenerationParams,
    weights: StepWeights,
) -> Result<ReasoningChain> {
    let table = regions_table(ctx.regions, true);
    let prompt = res.templates.reasoning.render(&[
        ("question", ctx.question),
        ("initial_answer", ctx.initial_answer),
        ("regions_table", &table),
        ("attention_summary", ctx.attention_summary),
        ("flow_guidance", res.guidance(flow)),
    ])?;
    let req = LlmGenerateRequest::with_params(prompt, Vec::new(), params);
    match backend.llm_generate(&req) {
        Ok(resp) => Ok(parse_chain(&resp.text, flow, weights)),
        Err(e) => {
            tracing::warn!(error = %e, "reasoning backend failed, using placeholder chain");
            Ok(ReasoningChain::placeholder(flow, weights, format!("backend failure: {e}")))
        }
    }
}
