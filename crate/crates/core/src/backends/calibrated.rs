//! Backends whose outputs are tuned so that pipeline metrics land on chosen
//! per-preset means.
//!
//! Each sample's question carries a slot tag `(case N)`. The integrator
//! recognises the preset from the sections present in its prompt and writes
//! a two-sentence explanation whose token statistics are fixed per preset
//! and distributed over slots so that the mean over a full cycle of slots
//! equals the target to within `1 / (2 * slots * tokens)`.
//!
//! Coherence depends only on the shared/exclusive set sizes `x`, `u`:
//! `0.5 + 0.5 * x / (x + u)`. Terminology is `hits / (2x + u)` and structure
//! is `k / 4`, both varied per slot.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use base64::Engine;
use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::mock::{is_reasoning_prompt, prompt_field};
use super::{
    AttentionArtifactRequest, AttentionArtifacts, BackendError, LlmBackend, LlmGenerateRequest,
    LlmGenerateResponse, VqaAnswerRequest, VqaAnswerResponse, VqaBackend, VQA_ATTENTION_PATH,
};
use crate::attention::{ChannelStack, FeatureStack, GradientStack};
use crate::error::{Error, Result};
use crate::pipeline::prompt::{
    ATTENTION_MARKER, BOX_MARKER, REASONING_MARKER, REFORMULATED_MARKER, REGIONS_MARKER,
};
use crate::reasoning::{StepKind, STEP_COUNT};
use crate::resources::TextResources;

pub const CALIBRATION_IMAGE_SIZE: u32 = 32;
const PLATEAU: usize = 6;

/// Per-step confidences spread over the 0.83..0.87 band reported for
/// individual reasoning chains.
pub const REPORTED_STEP_PROFILE: [f64; STEP_COUNT] = [0.84, 0.86, 0.83, 0.85, 0.87, 0.86];

/// Target means for the text-derived metrics of one preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetTargets {
    pub terminology: f64,
    pub structure: f64,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Slot cycle length; means are exact over full cycles.
    pub slots: usize,
    pub presets: BTreeMap<String, PresetTargets>,
    /// The two values of the checkerboard attention plateau.
    pub plateau: (f64, f64),
    /// Confidence attached to every reasoning step.
    pub step_confidences: [f64; STEP_COUNT],
}

impl CalibrationTargets {
    /// Component means of the reference ablation: region score 0.959 and
    /// reasoning confidence 0.890.
    pub fn ablation_reference() -> Self {
        let p = |terminology, structure, coherence| PresetTargets {
            terminology,
            structure,
            coherence,
        };
        let presets = BTreeMap::from([
            ("basic".to_string(), p(0.386, 0.403, 0.802)),
            ("query_reform".to_string(), p(0.499, 0.373, 0.882)),
            ("bbox".to_string(), p(0.485, 0.417, 0.878)),
            ("cot".to_string(), p(0.435, 0.370, 0.892)),
            ("complete".to_string(), p(0.436, 0.340, 0.894)),
        ]);
        Self {
            slots: 100,
            presets,
            plateau: (1.0, 0.918),
            step_confidences: [0.89; STEP_COUNT],
        }
    }

    /// Same targets with other per-step confidences, e.g.
    /// [`REPORTED_STEP_PROFILE`].
    pub fn with_step_confidences(mut self, c: [f64; STEP_COUNT]) -> Self {
        self.step_confidences = c;
        self
    }
}

/// Attention plateau for the calibrated VQA: a `PLATEAU`×`PLATEAU` checkerboard
/// at feature resolution equal to the image, so no resampling blurs it.
#[derive(Debug, Clone)]
pub struct CalibratedVqa {
    plateau: (f64, f64),
}

impl CalibratedVqa {
    pub fn new(targets: &CalibrationTargets) -> Self {
        Self {
            plateau: targets.plateau,
        }
    }
}

fn image_dims(b64: &str) -> Result<(usize, usize), BackendError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| BackendError::InvalidRequest(format!("image is not base64: {e}")))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| BackendError::InvalidRequest(format!("image does not decode: {e}")))?;
    Ok((img.height() as usize, img.width() as usize))
}

const CALIBRATED_ANSWERS: &[&str] = &[
    "adenocarcinoma, confidence 0.62",
    "chronic inflammation, confidence 0.58",
    "necrosis or hemorrhage, confidence 0.41",
    "yes, confidence 0.70",
];

fn slot_of(text: &str) -> Option<usize> {
    let start = text.rfind("(case ")? + "(case ".len();
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

impl VqaBackend for CalibratedVqa {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        req.validate()?;
        let slot = slot_of(&req.question).unwrap_or(0);
        Ok(VqaAnswerResponse {
            answer: CALIBRATED_ANSWERS[slot % CALIBRATED_ANSWERS.len()].to_string(),
        })
    }

    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        req.validate()?;
        let (h, w) = image_dims(&req.image)?;
        if h < PLATEAU || w < PLATEAU {
            return Err(BackendError::protocol(
                VQA_ATTENTION_PATH,
                format!("image {w}x{h} is smaller than the attention plateau"),
            ));
        }
        let (y0, x0) = ((h - PLATEAU) / 2, (w - PLATEAU) / 2);
        let mut features = vec![0.0; h * w];
        for r in 0..PLATEAU {
            for c in 0..PLATEAU {
                features[(y0 + r) * w + x0 + c] = if (r + c) % 2 == 0 {
                    self.plateau.0
                } else {
                    self.plateau.1
                };
            }
        }
        let stack = |v| ChannelStack::new(1, h, w, v).expect("calibrated tensor shape");
        Ok(AttentionArtifacts::Gradients {
            features: FeatureStack(stack(features)),
            gradients: GradientStack(stack(vec![1.0; h * w])),
            target_layer: super::mock::MOCK_TARGET_LAYER.to_string(),
            metadata: None,
        })
    }
}

/// Token budget for one preset's explanations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TextPlan {
    /// Words shared by both sentences.
    shared: usize,
    /// Words appearing in exactly one sentence.
    exclusive: usize,
    /// Lexicon occurrences summed over one slot cycle.
    hits_total: usize,
    /// Discourse sections present, summed over one slot cycle.
    sections_total: usize,
}

/// Room kept in the exclusive set for discourse cue words.
const CUE_ROOM: usize = 4;

/// Smallest `x, u` whose Jaccard term lands nearest the coherence target.
fn coherence_sizes(coherence: f64) -> (usize, usize) {
    let ratio = 2.0 * coherence - 1.0;
    let mut best = (f64::INFINITY, 0, 0);
    for x in 1..=80usize {
        for u in CUE_ROOM..=60usize {
            let err = (x as f64 / (x + u) as f64 - ratio).abs();
            if err < best.0 - 1e-12 {
                best = (err, x, u);
            }
        }
    }
    (best.1, best.2)
}

fn plan_for(t: &PresetTargets, slots: usize, sections: usize) -> Result<TextPlan> {
    let (shared, exclusive) = coherence_sizes(t.coherence);
    let tokens = 2 * shared + exclusive;
    let hits_total = (t.terminology * (tokens * slots) as f64).round() as usize;
    let sections_total = (t.structure * (sections * slots) as f64).round() as usize;
    let max_hits = hits_total.div_ceil(slots);
    if max_hits > 2 * shared + exclusive - CUE_ROOM {
        return Err(Error::Config(format!(
            "terminology target {} is not reachable with {tokens} tokens",
            t.terminology
        )));
    }
    if sections_total.div_ceil(slots) > sections.min(CUE_ROOM) {
        return Err(Error::Config(format!("structure target {} is not reachable", t.structure)));
    }
    Ok(TextPlan {
        shared,
        exclusive,
        hits_total,
        sections_total,
    })
}

/// Share of `total` given to `slot` so that every cycle sums to `total`.
fn spread(total: usize, slot: usize, slots: usize) -> usize {
    total * (slot + 1) / slots - total * slot / slots
}

fn pseudo_words(res: &TextResources, exclude: &[String]) -> Vec<String> {
    const SYL: [&str; 12] = ["ba", "do", "ki", "lu", "me", "no", "ra", "si", "tu", "ve", "zo", "pe"];
    let mut cue_tokens: Vec<String> = exclude.to_vec();
    for cues in [&res.discourse_cues, &res.structure_cues] {
        for name in cues.names() {
            cue_tokens.extend(cues.get(name).unwrap().words().map(str::to_string));
        }
    }
    let mut out = Vec::new();
    for a in SYL {
        for b in SYL {
            for c in SYL {
                let w = format!("{a}{b}{c}");
                if res.stopwords.contains(&w)
                    || res.lexicon.contains_word(&w)
                    || cue_tokens.contains(&w)
                {
                    continue;
                }
                out.push(w);
            }
        }
    }
    out
}

/// Calibrated text generation; see the module docs.
#[derive(Debug, Clone)]
pub struct CalibratedLlm {
    targets: CalibrationTargets,
    plans: BTreeMap<String, TextPlan>,
    /// Discourse sections in name order, each with one single-token cue.
    section_cues: Vec<String>,
    terms: Vec<String>,
    fillers: Vec<String>,
}

impl CalibratedLlm {
    pub fn new(targets: CalibrationTargets, res: &TextResources) -> Result<Self> {
        if targets.slots == 0 {
            return Err(Error::Config("calibration needs at least one slot".into()));
        }
        if targets.step_confidences.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return Err(Error::Config("step confidences must lie in (0, 1]".into()));
        }
        let is_content = |w: &str| w.chars().count() >= 3 && !res.stopwords.contains(w);
        let mut all_cue_words: Vec<String> = Vec::new();
        for name in res.discourse_cues.names() {
            all_cue_words.extend(res.discourse_cues.get(name).unwrap().words().map(str::to_string));
        }
        let mut section_cues = Vec::new();
        for name in res.discourse_cues.names() {
            let cue = res
                .discourse_cues
                .get(name)
                .unwrap()
                .single_words()
                .find(|w| is_content(w) && !res.lexicon.contains_word(w))
                .ok_or_else(|| {
                    Error::Config(format!("discourse section [{name}] has no usable one-word cue"))
                })?;
            section_cues.push(cue.to_string());
        }
        let terms: Vec<String> = res
            .lexicon
            .isolated_words()
            .into_iter()
            .filter(|w| is_content(w) && !all_cue_words.contains(w))
            .collect();
        let fillers = pseudo_words(res, &terms);

        let mut plans = BTreeMap::new();
        for (name, t) in &targets.presets {
            let plan = plan_for(t, targets.slots, section_cues.len())?;
            let need_terms = plan.hits_total.div_ceil(targets.slots);
            if need_terms > terms.len() {
                return Err(Error::Config("lexicon has too few one-word terms".into()));
            }
            if plan.shared + plan.exclusive > fillers.len() {
                return Err(Error::Config("not enough filler words".into()));
            }
            plans.insert(name.clone(), plan);
        }
        Ok(Self {
            targets,
            plans,
            section_cues,
            terms,
            fillers,
        })
    }

    pub fn targets(&self) -> &CalibrationTargets {
        &self.targets
    }

    /// Preset inferred from the sections of a unified prompt.
    pub fn detect_preset(prompt: &str) -> &'static str {
        if prompt.contains(REASONING_MARKER) {
            if prompt.contains(BOX_MARKER) {
                "complete"
            } else {
                "cot"
            }
        } else if prompt.contains(REGIONS_MARKER) {
            "bbox"
        } else if prompt.contains(ATTENTION_MARKER) || prompt.contains(REFORMULATED_MARKER) {
            "query_reform"
        } else {
            "basic"
        }
    }

    /// The explanation written for `preset` in `slot`.
    pub fn explanation(&self, preset: &str, slot: usize) -> Option<String> {
        let plan = self.plans.get(preset)?;
        let slots = self.targets.slots;
        let slot = slot % slots;
        let hits = spread(plan.hits_total, slot, slots);
        let k = spread(plan.sections_total, slot, slots);

        let x = plan.shared;
        let u = plan.exclusive;
        let xl = x.min(hits / 2);
        let ul = hits - 2 * xl;
        debug_assert!(ul + CUE_ROOM <= u);

        let mut terms = self.terms.iter();
        let mut fillers = self.fillers.iter();
        let mut shared: Vec<&str> = terms.by_ref().take(xl).map(String::as_str).collect();
        shared.extend(fillers.by_ref().take(x - xl).map(String::as_str));

        let mut exclusive: Vec<&str> = terms.by_ref().take(ul).map(String::as_str).collect();
        let n = self.section_cues.len();
        exclusive.extend((0..k).map(|j| self.section_cues[(slot + j) % n].as_str()));
        exclusive.extend(fillers.take(u - ul - k).map(String::as_str));

        let mut first = shared.clone();
        let mut second = shared;
        for (i, w) in exclusive.into_iter().enumerate() {
            if i % 2 == 0 {
                first.push(w);
            } else {
                second.push(w);
            }
        }
        let sentence = |words: Vec<&str>| {
            let mut s = words.join(" ");
            if let Some(c) = s.get(0..1) {
                let upper = c.to_ascii_uppercase();
                s.replace_range(0..1, &upper);
            }
            s.push('.');
            s
        };
        Some(format!("{} {}", sentence(first), sentence(second)))
    }

    fn chain(&self) -> String {
        let mut out = String::new();
        for (i, kind) in StepKind::ALL.iter().enumerate() {
            out.push_str(&format!(
                "Step {} ({}): Findings for this step are consistent with the initial answer.\nconfidence: {}\n\n",
                i + 1,
                kind.label(),
                self.targets.step_confidences[i]
            ));
        }
        out
    }
}

impl LlmBackend for CalibratedLlm {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        req.validate()?;
        let prompt = &req.prompt;
        let text = if is_reasoning_prompt(prompt) {
            self.chain()
        } else if prompt_field(prompt, "Initial model answer:").is_some() {
            let preset = Self::detect_preset(prompt);
            let slot = slot_of(prompt).unwrap_or(0);
            self.explanation(preset, slot)
                .unwrap_or_else(|| "No calibrated explanation for this configuration.".into())
        } else {
            let q = prompt_field(prompt, "Question:").unwrap_or("the question");
            format!(
                "In this histopathology image, identify the tissue structures and describe the diagnostic findings relevant to: {q}"
            )
        };
        Ok(LlmGenerateResponse { text })
    }
}

/// Writes `n` small PNG images and a JSONL manifest whose questions carry
/// `(case i)` slot tags. Returns the manifest path.
pub fn calibration_manifest(dir: &Path, n: usize) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = dir.join("manifest.jsonl");
    let mut out = std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let s = CALIBRATION_IMAGE_SIZE;
    for i in 0..n {
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(s, s, |x, y| {
            let v = ((x * 5 + y * 3 + i as u32 * 7) % 64) as u8;
            Rgb([180 + v, 120 + v / 2, 170 + v])
        });
        let rel = format!("images/case_{i:03}.png");
        let path = dir.join(&rel);
        img.save(&path)?;
        let line = serde_json::json!({
            "id": format!("case_{i:03}"),
            "image": rel,
            "question": format!("What abnormality is present in this tissue? (case {i})"),
            "answer": "",
        });
        writeln!(out, "{line}").map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(manifest)
}
