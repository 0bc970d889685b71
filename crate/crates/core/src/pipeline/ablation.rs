use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvaluationScores;

use super::record::{persist_record, record_path};
use super::run::PresetRecords;

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_COLUMNS: [&str; 8] = [
    "config",
    "sample_id",
    "terminology",
    "structure",
    "coherence",
    "attention_quality",
    "reasoning_confidence",
    "composite",
];

/// One line of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub sample_id: String,
    pub terminology: f64,
    pub structure: f64,
    pub coherence: f64,
    pub attention_quality: f64,
    pub reasoning_confidence: f64,
    pub composite: f64,
}

impl AblationRow {
    pub fn scores(&self) -> EvaluationScores {
        EvaluationScores {
            terminology: self.terminology,
            structure: self.structure,
            coherence: self.coherence,
            attention_quality: self.attention_quality,
            reasoning_confidence: self.reasoning_confidence,
            composite: self.composite,
        }
    }
}

pub fn ablation_rows(results: &[PresetRecords]) -> Vec<AblationRow> {
    results
        .iter()
        .flat_map(|p| p.records.iter())
        .map(|r| AblationRow {
            config: r.config.clone(),
            sample_id: r.sample_id.clone(),
            terminology: r.scores.terminology,
            structure: r.scores.structure,
            coherence: r.scores.coherence,
            attention_quality: r.scores.attention_quality,
            reasoning_confidence: r.scores.reasoning_confidence,
            composite: r.scores.composite,
        })
        .collect()
}

/// CSV with six decimals per score; the header is always present.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ABLATION_COLUMNS)?;
    for r in rows {
        let f = |v: f64| format!("{v:.6}");
        w.write_record([
            r.config.clone(),
            r.sample_id.clone(),
            f(r.terminology),
            f(r.structure),
            f(r.coherence),
            f(r.attention_quality),
            f(r.reasoning_confidence),
            f(r.composite),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_ablation_csv(text: &str, path: &Path) -> Result<Vec<AblationRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ABLATION_COLUMNS {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected columns {}", ABLATION_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<AblationRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

pub fn read_ablation_csv(path: &Path) -> Result<Vec<AblationRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ablation_csv(&text, path)
}

/// Composite samples grouped by configuration.
pub fn composites_by_config(rows: &[AblationRow]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.config.clone()).or_default().push(r.composite);
    }
    out
}

/// Mean scores of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub n: usize,
    pub means: EvaluationScores,
}

/// Per-configuration means in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<ConfigSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<String, (usize, [f64; 6])> = BTreeMap::new();
    for r in rows {
        if !acc.contains_key(&r.config) {
            order.push(r.config.clone());
        }
        let e = acc.entry(r.config.clone()).or_insert((0, [0.0; 6]));
        e.0 += 1;
        let v = [
            r.terminology,
            r.structure,
            r.coherence,
            r.attention_quality,
            r.reasoning_confidence,
            r.composite,
        ];
        for (a, b) in e.1.iter_mut().zip(v) {
            *a += b;
        }
    }
    order
        .into_iter()
        .map(|config| {
            let (n, s) = acc[&config];
            let m = |i: usize| s[i] / n as f64;
            ConfigSummary {
                config,
                n,
                means: EvaluationScores {
                    terminology: m(0),
                    structure: m(1),
                    coherence: m(2),
                    attention_quality: m(3),
                    reasoning_confidence: m(4),
                    composite: m(5),
                },
            }
        })
        .collect()
}

/// Aligned table of per-configuration means.
pub fn summary_table(summaries: &[ConfigSummary]) -> String {
    let mut out = format!(
        "{:<16} {:>5} {:>11} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "config", "n", "terminology", "structure", "coherence", "attention", "reasoning", "composite"
    );
    for s in summaries {
        let m = &s.means;
        out.push_str(&format!(
            "{:<16} {:>5} {:>11.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
            s.config,
            s.n,
            m.terminology,
            m.structure,
            m.coherence,
            m.attention_quality,
            m.reasoning_confidence,
            m.composite
        ));
    }
    out
}

/// Writes every record and `ablation.csv` under `outdir`.
pub fn write_ablation(outdir: &Path, results: &[PresetRecords]) -> Result<()> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    for p in results {
        for r in &p.records {
            persist_record(r, &record_path(outdir, r))?;
        }
    }
    let csv_path = outdir.join(ABLATION_CSV);
    std::fs::write(&csv_path, ablation_csv(&ablation_rows(results))?)
        .map_err(|e| Error::io(&csv_path, e))
}
