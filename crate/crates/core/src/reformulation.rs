//! Question rewriting and its quality measures.

use serde::{Deserialize, Serialize};

use crate::backends::{GenerationParams, LlmBackend, LlmGenerateRequest};
use crate::error::{Error, Result};
use crate::resources::TextResources;
use crate::text::{content_tokens, tokenize, CueSets, Lexicon, StopWords};

/// Floor on the original question's quality when computing relative gain.
pub const QUALITY_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityWeights {
    pub terminology: f64,
    pub structure: f64,
}

impl Default for QualityWeights {
    fn default() -> Self {
        Self {
            terminology: 0.5,
            structure: 0.5,
        }
    }
}

impl QualityWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.terminology >= 0.0
            && self.structure >= 0.0
            && ((self.terminology + self.structure) - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "reformulation quality weights must be non-negative and sum to 1, got {self:?}"
            )))
        }
    }

    pub fn quality(&self, terminology: f64, structure: f64) -> f64 {
        self.terminology * terminology + self.structure * structure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulatedQuery {
    pub original: String,
    pub reformulated: String,
    pub terminology_density_original: f64,
    pub terminology_density_reformulated: f64,
    pub structure_compliance_original: f64,
    pub structure_compliance: f64,
    /// Relative quality gain over the original question.
    pub improvement: f64,
    /// Set when the backend failed and the original question was kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Share of content tokens covered by lexicon terms. Zero for text without
/// content tokens.
pub fn terminology_density(text: &str, lexicon: &Lexicon, stop: &StopWords) -> f64 {
    let tokens = content_tokens(text, stop);
    if tokens.is_empty() {
        return 0.0;
    }
    lexicon.count_hits(&tokens) as f64 / tokens.len() as f64
}

/// Fraction of cue sections with at least one match in `text`.
pub fn structure_compliance(text: &str, cues: &CueSets) -> f64 {
    if text.trim().is_empty() {
        return 0.0;
    }
    let tokens = tokenize(text);
    let names: Vec<&str> = cues.names().collect();
    if names.is_empty() {
        return 0.0;
    }
    let hit = names
        .iter()
        .filter(|n| cues.get(n).is_some_and(|c| c.matches(text, &tokens)))
        .count();
    hit as f64 / names.len() as f64
}

fn score(
    original: &str,
    reformulated: &str,
    res: &TextResources,
    weights: &QualityWeights,
    fallback: Option<String>,
) -> ReformulatedQuery {
    let td_o = terminology_density(original, &res.lexicon, &res.stopwords);
    let td_r = terminology_density(reformulated, &res.lexicon, &res.stopwords);
    let sc_o = structure_compliance(original, &res.structure_cues);
    let sc_r = structure_compliance(reformulated, &res.structure_cues);
    let improvement = if fallback.is_some() {
        0.0
    } else {
        let q_o = weights.quality(td_o, sc_o);
        let q_r = weights.quality(td_r, sc_r);
        (q_r - q_o) / q_o.max(QUALITY_EPSILON)
    };
    ReformulatedQuery {
        original: original.to_string(),
        reformulated: reformulated.to_string(),
        terminology_density_original: td_o,
        terminology_density_reformulated: td_r,
        structure_compliance_original: sc_o,
        structure_compliance: sc_r,
        improvement,
        fallback,
    }
}

/// Rewrites `question` through the LLM. Backend failures and empty replies
/// fall back to the original question; only an empty question is an error.
pub fn reformulate(
    question: &str,
    backend: &dyn LlmBackend,
    res: &TextResources,
    params: &GenerationParams,
    weights: &QualityWeights,
) -> Result<ReformulatedQuery> {
    if question.trim().is_empty() {
        return Err(Error::invalid("question is empty"));
    }
    let prompt = res
        .templates
        .reformulate
        .render(&[("question", question)])?;
    let req = LlmGenerateRequest::with_params(prompt, Vec::new(), params);
    let (text, fallback) = match backend.llm_generate(&req) {
        Ok(resp) => {
            let cleaned = resp.text.trim().trim_matches('"').trim().to_string();
            if cleaned.is_empty() {
                (question.to_string(), Some("empty reformulation".to_string()))
            } else {
                (cleaned, None)
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, "reformulation failed, keeping original question");
            (question.to_string(), Some(e.to_string()))
        }
    };
    Ok(score(question, &text, res, weights, fallback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, MockLlm, ScriptedLlm, UnavailableReason};

    fn fixture_lexicon() -> (Lexicon, StopWords) {
        let stop = StopWords::parse("the\nand\nwith\nfrom\nthis\n");
        let lex = Lexicon::parse("necrosis\nfibrosis\nepithelium\nlymph node\n", &stop);
        (lex, stop)
    }

    #[test]
    fn density_cases() {
        let (lex, stop) = fixture_lexicon();
        assert_eq!(terminology_density("", &lex, &stop), 0.0);
        assert_eq!(terminology_density("Necrosis, fibrosis.", &lex, &stop), 1.0);
        let text = "The slide shows necrosis and fibrosis with lymph node tissue near dense pink stroma cells today";
        assert_eq!(content_tokens(text, &stop).len(), 13);
        // ten content tokens, four covered: necrosis, fibrosis, lymph node
        let ten = "Slide shows necrosis and fibrosis with lymph node near pink stroma cells";
        let toks = content_tokens(ten, &stop);
        assert_eq!(toks.len(), 10, "{toks:?}");
        assert!((terminology_density(ten, &lex, &stop) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn appending_a_term_never_lowers_hits() {
        let (lex, stop) = fixture_lexicon();
        let base = content_tokens("lymph tissue necrosis", &stop);
        let mut more = base.clone();
        more.push("node".into());
        assert!(lex.count_hits(&more) >= lex.count_hits(&base));
    }

    #[test]
    fn compliance_cases() {
        let cues = CueSets::parse("[q]\n?\nidentify\n[anat]\ntissue\n[out]\nfeatures\n").unwrap();
        assert_eq!(structure_compliance("", &cues), 0.0);
        assert_eq!(
            structure_compliance("Identify tissue features.", &cues),
            1.0
        );
        assert!((structure_compliance("What tissue is this?", &cues) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mock_reformulation_adds_domain_terms() {
        let res = TextResources::builtin();
        let q = reformulate(
            "What is present?",
            &MockLlm::reformulator(1),
            &res,
            &GenerationParams::default(),
            &QualityWeights::default(),
        )
        .unwrap();
        assert!(q.reformulated.contains("histopathology"));
        assert!(q.reformulated.contains("identify"));
        assert!(q.fallback.is_none());
        assert!(q.improvement > 0.0);
        assert!(q.terminology_density_reformulated > q.terminology_density_original);
    }

    #[test]
    fn empty_reply_falls_back() {
        let res = TextResources::builtin();
        let q = reformulate(
            "What is present?",
            &ScriptedLlm::fixed("   "),
            &res,
            &GenerationParams::default(),
            &QualityWeights::default(),
        )
        .unwrap();
        assert_eq!(q.reformulated, "What is present?");
        assert_eq!(q.improvement, 0.0);
        assert!(q.fallback.is_some());
    }

    #[test]
    fn timeout_falls_back() {
        let res = TextResources::builtin();
        let timeout = ScriptedLlm::new(|_| {
            Err(BackendError::Unavailable {
                endpoint: "/v1/llm/generate".into(),
                attempts: 3,
                reason: UnavailableReason::Timeout,
            })
        });
        let q = reformulate(
            "Is this malignant?",
            &timeout,
            &res,
            &GenerationParams::default(),
            &QualityWeights::default(),
        )
        .unwrap();
        assert_eq!(q.reformulated, "Is this malignant?");
        assert!(q.fallback.as_deref().unwrap().contains("timed out"));
    }

    #[test]
    fn empty_question_is_an_error() {
        let res = TextResources::builtin();
        assert!(reformulate(
            " ",
            &MockLlm::reformulator(0),
            &res,
            &GenerationParams::default(),
            &QualityWeights::default()
        )
        .is_err());
    }
}
