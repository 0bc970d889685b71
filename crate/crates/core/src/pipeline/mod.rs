//! Stage orchestration, presets, manifests and persisted records.
//!
//! Stages run in a fixed order: reformulate, initial answer, attention,
//! regions, reasoning chain, unified answer, evaluation. A failing stage
//! never aborts the sample; it is recorded in the record's `errors` and, for
//! attention, in its `degradation` level.

mod ablation;
mod config;
mod manifest;
pub mod prompt;
mod record;
mod run;

pub use ablation::{
    ablation_csv, ablation_rows, composites_by_config, parse_ablation_csv, read_ablation_csv,
    summarize, summary_table, write_ablation, AblationRow, ConfigSummary, ABLATION_COLUMNS,
    ABLATION_CSV,
};
pub use config::{builtin_presets, PipelineOptions, Preset, PresetFlags, PresetRegistry};
pub use manifest::{load_manifest, parse_manifest, valid_sample_id, Sample};
pub use record::{
    load_record, persist_record, record_path, Degradation, HeatmapSummary, PipelineRecord,
    StageError, StageTimings,
};
pub use run::{
    candidate_count, pathology_confidence, run_ablation, run_sample, PipelineContext,
    PresetRecords, DEFAULT_PATHOLOGY_CONFIDENCE, NO_INITIAL_ANSWER,
};
