use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::read_file;

/// One image-question pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: PathBuf,
    pub question: String,
    #[serde(default)]
    pub ground_truth: String,
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    image: PathBuf,
    question: String,
    #[serde(default)]
    answer: String,
}

/// Ids become file names, so they are restricted to a safe alphabet.
pub fn valid_sample_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses a JSONL manifest. Relative image paths resolve against the
/// manifest's directory.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<Sample>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !valid_sample_id(&m.id) {
            return Err(err(format!(
                "sample id {:?} must use only ASCII letters, digits, '_', '-' or '.'",
                m.id
            )));
        }
        if m.question.trim().is_empty() {
            return Err(err(format!("sample {} has an empty question", m.id)));
        }
        if !seen.insert(m.id.clone()) {
            return Err(err(format!("duplicate sample id {}", m.id)));
        }
        let image = if m.image.is_absolute() {
            m.image
        } else {
            base.join(m.image)
        };
        out.push(Sample {
            id: m.id,
            image,
            question: m.question,
            ground_truth: m.answer,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    parse_manifest(&read_file(path)?, path)
}
