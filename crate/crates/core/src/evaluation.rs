//! Five explanation-quality dimensions and their weighted composite.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reformulation::{structure_compliance, terminology_density};
use crate::regions::RegionBox;
use crate::resources::TextResources;
use crate::scalar::Scalar;
use crate::text::{content_tokens, split_sentences, CueSets, Lexicon, StopWords};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricWeights {
    pub terminology: f64,
    pub structure: f64,
    pub coherence: f64,
    pub attention_quality: f64,
    pub reasoning_confidence: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            terminology: 0.25,
            structure: 0.20,
            coherence: 0.25,
            attention_quality: 0.15,
            reasoning_confidence: 0.15,
        }
    }
}

impl MetricWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.terminology,
            self.structure,
            self.coherence,
            self.attention_quality,
            self.reasoning_confidence,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("metric weights must be non-negative, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("metric weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Component scores, each in [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub terminology: f64,
    pub structure: f64,
    pub coherence: f64,
    pub attention_quality: f64,
    pub reasoning_confidence: f64,
}

impl MetricScores {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.terminology,
            self.structure,
            self.coherence,
            self.attention_quality,
            self.reasoning_confidence,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationScores {
    pub terminology: f64,
    pub structure: f64,
    pub coherence: f64,
    pub attention_quality: f64,
    pub reasoning_confidence: f64,
    pub composite: f64,
}

impl EvaluationScores {
    pub fn components(&self) -> MetricScores {
        MetricScores {
            terminology: self.terminology,
            structure: self.structure,
            coherence: self.coherence,
            attention_quality: self.attention_quality,
            reasoning_confidence: self.reasoning_confidence,
        }
    }
}

pub fn score_terminology(explanation: &str, lexicon: &Lexicon, stop: &StopWords) -> f64 {
    terminology_density(explanation, lexicon, stop)
}

/// Fraction of discourse elements with at least one cue present.
pub fn score_structure(explanation: &str, cues: &CueSets) -> f64 {
    structure_compliance(explanation, cues)
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// `0.5 + 0.5 * mean adjacent Jaccard` over sentences that carry content
/// tokens; 0.5 for non-empty text with fewer than two such sentences, 0 for
/// blank text.
pub fn score_coherence(explanation: &str, stop: &StopWords) -> f64 {
    if explanation.trim().is_empty() {
        return 0.0;
    }
    let sets: Vec<HashSet<String>> = split_sentences(explanation)
        .into_iter()
        .map(|s| content_tokens(s, stop).into_iter().collect::<HashSet<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    if sets.len() < 2 {
        return 0.5;
    }
    let total: f64 = sets.windows(2).map(|w| jaccard(&w[0], &w[1])).sum();
    0.5 + 0.5 * total / (sets.len() - 1) as f64
}

/// Mean region score; 0 without regions.
pub fn score_attention<T: Scalar>(regions: &[RegionBox<T>]) -> T {
    if regions.is_empty() {
        return T::zero();
    }
    let sum = regions.iter().fold(T::zero(), |acc, r| acc + r.score);
    sum / T::from_count(regions.len())
}

/// Weighted sum of the five components.
pub fn composite(scores: &MetricScores, weights: &MetricWeights) -> Result<f64> {
    weights.validate()?;
    let s = scores.as_array();
    if s.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("scores must lie in [0, 1], got {s:?}")));
    }
    let dot: f64 = s.iter().zip(weights.as_array()).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// Scores one explanation. `reasoning_confidence` is 0 when no chain ran.
pub fn evaluate(
    explanation: &str,
    regions: &[RegionBox<f64>],
    reasoning_confidence: f64,
    res: &TextResources,
    weights: &MetricWeights,
) -> Result<EvaluationScores> {
    let m = MetricScores {
        terminology: score_terminology(explanation, &res.lexicon, &res.stopwords),
        structure: score_structure(explanation, &res.discourse_cues),
        coherence: score_coherence(explanation, &res.stopwords),
        attention_quality: score_attention(regions),
        reasoning_confidence,
    };
    let c = composite(&m, weights)?;
    Ok(EvaluationScores {
        terminology: m.terminology,
        structure: m.structure,
        coherence: m.coherence,
        attention_quality: m.attention_quality,
        reasoning_confidence: m.reasoning_confidence,
        composite: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(score: f64) -> RegionBox<f64> {
        RegionBox {
            x: 0,
            y: 0,
            width: 1,
            height: 1,
            score,
            rank: 1,
            area_px: 1,
        }
    }

    fn comp(t: f64, s: f64, c: f64, a: f64, r: f64) -> f64 {
        composite(
            &MetricScores {
                terminology: t,
                structure: s,
                coherence: c,
                attention_quality: a,
                reasoning_confidence: r,
            },
            &MetricWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn composite_reproduces_reported_rows() {
        assert!((comp(0.386, 0.403, 0.802, 0.0, 0.0) - 0.378).abs() <= 1e-3);
        assert!((comp(0.499, 0.373, 0.882, 0.959, 0.0) - 0.564).abs() <= 1e-3);
        assert!((comp(0.435, 0.370, 0.892, 0.959, 0.890) - 0.683).abs() <= 1e-3);
    }

    #[test]
    fn bad_weights_are_rejected() {
        let w = MetricWeights {
            terminology: 0.3,
            ..Default::default()
        };
        assert!(composite(&MetricScores::default(), &w).is_err());
    }

    #[test]
    fn attention_examples() {
        assert_eq!(score_attention::<f64>(&[]), 0.0);
        let v = score_attention(&[region(0.92), region(0.96), region(1.0)]);
        assert!((v - 0.96).abs() < 1e-12);
        assert_eq!(score_attention(&[region(1.0), region(1.0)]), 1.0);
    }

    #[test]
    fn coherence_examples() {
        let stop = StopWords::parse("the\nis\n");
        assert_eq!(score_coherence("", &stop), 0.0);
        assert_eq!(score_coherence("  \n", &stop), 0.0);
        assert_eq!(score_coherence("Dense stroma here.", &stop), 0.5);
        assert_eq!(score_coherence("Dense stroma here. Dense stroma here.", &stop), 1.0);
        // {dense, stroma, cells} / {stroma, cells, nuclei} / {nuclei, large}
        // J1 = 2/4, J2 = 1/4, mean 3/8
        let v = score_coherence(
            "Dense stroma cells. Stroma cells nuclei. Nuclei large.",
            &stop,
        );
        assert!((v - (0.5 + 0.5 * 0.375)).abs() < 1e-12);
    }

    #[test]
    fn structure_detects_limitation() {
        let res = TextResources::builtin();
        let demo = "The image shows glandular tissue with crowded nuclei. \
                    However, the limited field of view prevents assessment of deeper layers.";
        assert!(score_structure(demo, &res.discourse_cues) >= 0.5);
        assert_eq!(score_structure("", &res.discourse_cues), 0.0);
        let all = "The slide shows cells. This suggests change. However it is unclear. Therefore benign.";
        assert_eq!(score_structure(all, &res.discourse_cues), 1.0);
    }

    #[test]
    fn terminology_extremes() {
        let res = TextResources::builtin();
        assert_eq!(score_terminology("", &res.lexicon, &res.stopwords), 0.0);
        assert_eq!(
            score_terminology("Necrosis and fibrosis.", &res.lexicon, &res.stopwords),
            1.0
        );
    }
}
