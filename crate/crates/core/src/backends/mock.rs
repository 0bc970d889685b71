//! Deterministic in-process backends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    AttentionArtifactRequest, AttentionArtifacts, BackendError, LlmBackend, LlmGenerateRequest,
    LlmGenerateResponse, VqaAnswerRequest, VqaAnswerResponse, VqaBackend, LLM_GENERATE_PATH,
    VQA_ANSWER_PATH, VQA_ATTENTION_PATH,
};
use crate::attention::{ChannelStack, FeatureStack, GradientStack, Grid};

pub const MOCK_TARGET_LAYER: &str = "vision_model.encoder.layers.11";

fn rng_for(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

fn blob(grid: usize, cy: f64, cx: f64, sigma: f64) -> impl Iterator<Item = f64> {
    (0..grid * grid).map(move |i| {
        let (r, c) = ((i / grid) as f64, (i % grid) as f64);
        (-((r - cy).powi(2) + (c - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
    })
}

/// Seeded VQA server stand-in. Answers and attention tensors depend only on
/// the seed, the image bytes and the question.
#[derive(Debug, Clone)]
pub struct MockVqa {
    pub seed: u64,
    pub channels: usize,
    pub grid: usize,
    /// Return the pre-reduced heatmap variant instead of raw tensors.
    pub heatmap_variant: bool,
}

const MOCK_ANSWERS: &[&str] = &[
    "yes",
    "no",
    "necrosis",
    "chronic inflammation",
    "fibrosis",
    "adenocarcinoma",
    "granuloma",
    "hemorrhage",
];

impl MockVqa {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            channels: 4,
            grid: 14,
            heatmap_variant: false,
        }
    }

    pub fn with_heatmap_variant(mut self) -> Self {
        self.heatmap_variant = true;
        self
    }
}

impl VqaBackend for MockVqa {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        req.validate()?;
        let mut rng = rng_for(
            self.seed,
            &[b"answer", req.image.as_bytes(), req.question.as_bytes()],
        );
        let answer = MOCK_ANSWERS[rng.random_range(0..MOCK_ANSWERS.len())];
        Ok(VqaAnswerResponse {
            answer: answer.to_string(),
        })
    }

    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        req.validate()?;
        let mut rng = rng_for(
            self.seed,
            &[b"attention", req.image.as_bytes(), req.question.as_bytes()],
        );
        let g = self.grid;
        let hi = (g as f64 - 1.0).max(1.0);
        if self.heatmap_variant {
            let (cy, cx) = (rng.random_range(0.0..hi), rng.random_range(0.0..hi));
            let sigma = rng.random_range(1.5..3.5);
            let values: Vec<f64> = blob(g, cy, cx, sigma).collect();
            return Ok(AttentionArtifacts::Heatmap {
                heatmap: Grid::new(g, g, values).expect("mock grid shape"),
                target_layer: Some(MOCK_TARGET_LAYER.to_string()),
                metadata: None,
            });
        }
        let mut features = Vec::with_capacity(self.channels * g * g);
        let mut gradients = Vec::with_capacity(self.channels * g * g);
        for _ in 0..self.channels {
            let (cy, cx) = (rng.random_range(0.0..hi), rng.random_range(0.0..hi));
            let sigma = rng.random_range(1.0..3.0);
            let amp = rng.random_range(0.5..2.0);
            for v in blob(g, cy, cx, sigma) {
                features.push(amp * v + rng.random_range(0.0..0.05));
            }
            let weight = rng.random_range(-0.3..1.0);
            for _ in 0..g * g {
                gradients.push(weight + rng.random_range(-0.05..0.05));
            }
        }
        let shape = |v| ChannelStack::new(self.channels, g, g, v).expect("mock tensor shape");
        Ok(AttentionArtifacts::Gradients {
            features: FeatureStack(shape(features)),
            gradients: GradientStack(shape(gradients)),
            target_layer: MOCK_TARGET_LAYER.to_string(),
            metadata: Some(serde_json::json!({"gradient_target": "top answer logit"})),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockRole {
    Reformulator,
    Integrator,
}

/// Seeded LLM stand-in.
///
/// The reformulator rewrites the `Question:` line of its prompt. The
/// integrator answers reasoning prompts (recognised by a `Step 6` label)
/// with six sections each ending in `confidence: 0.xx`, and answers any
/// other prompt with a short explanation that mentions how many region
/// lines (`rN score=...`) the prompt contained.
#[derive(Debug, Clone)]
pub struct MockLlm {
    pub seed: u64,
    pub role: MockRole,
}

pub(crate) fn prompt_field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix(label))
        .map(str::trim)
}

pub(crate) fn is_reasoning_prompt(prompt: &str) -> bool {
    prompt.contains("Step 6")
}

pub(crate) fn count_region_lines(prompt: &str) -> usize {
    prompt
        .lines()
        .filter(|l| {
            let l = l.trim();
            l.strip_prefix('r').is_some_and(|rest| {
                let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
                !digits.is_empty() && rest[digits.len()..].starts_with(" score=")
            })
        })
        .count()
}

const STEP_TEXT: [&str; 6] = [
    "The section shows glandular epithelium with stromal tissue and scattered inflammatory cells.",
    "The highlighted regions fall on cellular areas with crowded nuclei.",
    "Nuclear crowding and stromal reaction are features used to grade epithelial lesions.",
    "Reactive atypia and dysplasia remain alternatives given the limited field.",
    "Morphology and attention agree on the epithelial compartment.",
    "The findings favour the initial answer.",
];

impl MockLlm {
    pub fn reformulator(seed: u64) -> Self {
        Self {
            seed,
            role: MockRole::Reformulator,
        }
    }

    pub fn integrator(seed: u64) -> Self {
        Self {
            seed,
            role: MockRole::Integrator,
        }
    }

    fn reasoning(&self, rng: &mut ChaCha8Rng) -> String {
        let mut out = String::new();
        let labels = [
            "visual observation",
            "attention analysis",
            "medical context",
            "differential analysis",
            "evidence integration",
            "clinical conclusion",
        ];
        for (i, (label, text)) in labels.iter().zip(STEP_TEXT).enumerate() {
            let c: f64 = rng.random_range(0.80..0.92);
            out.push_str(&format!(
                "Step {} ({label}): {text}\nconfidence: {:.2}\n\n",
                i + 1,
                c
            ));
        }
        out
    }

    fn unified(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let answer = prompt_field(prompt, "Initial model answer:").unwrap_or("unclear");
        let n = count_region_lines(prompt);
        let mut parts = vec![format!(
            "The image shows tissue with {n} highlighted regions of interest."
        )];
        parts.push(format!(
            "The morphology in these areas suggests {answer}, with nuclear changes in the epithelium."
        ));
        if rng.random_bool(0.5) {
            parts.push("However, the limited field of view prevents assessment of deeper tissue.".into());
        }
        if rng.random_bool(0.7) {
            parts.push(format!("Overall, the answer is {answer}."));
        }
        parts.join(" ")
    }
}

impl LlmBackend for MockLlm {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        req.validate()?;
        let mut rng = rng_for(self.seed, &[b"llm", req.prompt.as_bytes()]);
        let text = match self.role {
            MockRole::Reformulator => {
                let q = prompt_field(&req.prompt, "Question:").unwrap_or("the question");
                format!(
                    "For this histopathology image, identify the tissue architecture and cellular \
                     changes relevant to \"{q}\" and describe the diagnostic features that support the answer."
                )
            }
            MockRole::Integrator if is_reasoning_prompt(&req.prompt) => self.reasoning(&mut rng),
            MockRole::Integrator => self.unified(&req.prompt, &mut rng),
        };
        Ok(LlmGenerateResponse { text })
    }
}

type LlmScript =
    dyn Fn(&LlmGenerateRequest) -> Result<String, BackendError> + Send + Sync + 'static;

/// LLM backed by a closure; handy for fixtures.
pub struct ScriptedLlm {
    script: Box<LlmScript>,
}

impl ScriptedLlm {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&LlmGenerateRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            script: Box::new(f),
        }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn failing() -> Self {
        Self::new(|_| Err(BackendError::injected(LLM_GENERATE_PATH)))
    }
}

impl LlmBackend for ScriptedLlm {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        req.validate()?;
        (self.script)(req).map(|text| LlmGenerateResponse { text })
    }
}

/// Which endpoints a [`WithFaults`] wrapper takes down.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultSet {
    pub vqa_answer: bool,
    pub attention: bool,
    pub llm: bool,
}

/// Wraps a backend and fails the selected endpoints.
#[derive(Debug, Clone)]
pub struct WithFaults<B> {
    pub inner: B,
    pub faults: FaultSet,
}

impl<B> WithFaults<B> {
    pub fn new(inner: B, faults: FaultSet) -> Self {
        Self { inner, faults }
    }
}

impl<B: VqaBackend> VqaBackend for WithFaults<B> {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        if self.faults.vqa_answer {
            return Err(BackendError::injected(VQA_ANSWER_PATH));
        }
        self.inner.vqa_answer(req)
    }

    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        if self.faults.attention {
            return Err(BackendError::injected(VQA_ATTENTION_PATH));
        }
        self.inner.attention_artifacts(req)
    }
}

impl<B: LlmBackend> LlmBackend for WithFaults<B> {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        if self.faults.llm {
            return Err(BackendError::injected(LLM_GENERATE_PATH));
        }
        self.inner.llm_generate(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_png_b64;

    #[test]
    fn mock_vqa_is_deterministic() {
        let img = tiny_png_b64(8, 8, 3);
        let req = VqaAnswerRequest::new(img.clone(), "What is present?");
        let a = MockVqa::new(7).vqa_answer(&req).unwrap();
        let b = MockVqa::new(7).vqa_answer(&req).unwrap();
        assert_eq!(a, b);

        let areq = AttentionArtifactRequest::new(img, "What is present?");
        let x = MockVqa::new(7).attention_artifacts(&areq).unwrap();
        let y = MockVqa::new(7).attention_artifacts(&areq).unwrap();
        assert_eq!(x, y);
        let z = MockVqa::new(8).attention_artifacts(&areq).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn heatmap_variant_is_in_range() {
        let areq = AttentionArtifactRequest::new(tiny_png_b64(4, 4, 1), "q");
        match MockVqa::new(1).with_heatmap_variant().attention_artifacts(&areq).unwrap() {
            AttentionArtifacts::Heatmap { heatmap, .. } => {
                assert!(heatmap.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            _ => panic!("expected heatmap variant"),
        }
    }

    #[test]
    fn integrator_echoes_region_count() {
        let prompt = "Question: q\nInitial model answer: necrosis\nr1 score=0.900 area=12px\nr2 score=0.800 area=9px\n";
        let text = MockLlm::integrator(3)
            .llm_generate(&LlmGenerateRequest::new(prompt))
            .unwrap()
            .text;
        assert!(text.contains("2 highlighted regions"), "{text}");
    }

    #[test]
    fn reformulator_mentions_domain() {
        let text = MockLlm::reformulator(0)
            .llm_generate(&LlmGenerateRequest::new("Question: What is present?"))
            .unwrap()
            .text;
        assert!(text.contains("histopathology"));
        assert!(text.contains("identify"));
    }

    #[test]
    fn faults_fail_selected_endpoints() {
        let llm = WithFaults::new(
            MockLlm::integrator(0),
            FaultSet {
                llm: true,
                ..Default::default()
            },
        );
        assert!(llm.llm_generate(&LlmGenerateRequest::new("x")).is_err());
    }
}
