mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use xvqa_core::backends::calibration_manifest;
use xvqa_core::pipeline::{
    ablation_rows, composites_by_config, load_manifest, load_record, persist_record,
    read_ablation_csv, record_path, run_ablation, run_sample, summarize, summary_table,
    valid_sample_id, write_ablation, PipelineContext, PipelineRecord, Sample, ABLATION_CSV,
};
use xvqa_core::render::{
    compose_panel, record_panels, render_radar, save_png, OverlaySpec, PANEL_GUTTER,
};
use xvqa_core::stats::{compare_configurations, report_csv, report_text, TTestKind};
use xvqa_core::{Error, Result};

use config::load_config;

const EXIT_INPUT: u8 = 2;
const EXIT_OUTAGE: u8 = 3;

/// Explainable visual question answering for pathology images.
#[derive(Parser)]
#[command(name = "xvqa", version, about)]
struct Cli {
    /// Log verbosity: -v info, -vv debug. RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one image and question through a preset.
    Run(RunArgs),
    /// Run every manifest sample under each preset and write ablation.csv.
    Ablate(AblateArgs),
    /// Compare configurations in an ablation CSV against a baseline.
    Stats(StatsArgs),
    /// Render panels for a record or a radar chart for an ablation CSV.
    Render(RenderArgs),
    /// Write the synthetic manifest served by the calibrated backends.
    CalibrationManifest(CalibrationArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; defaults to mock backends.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long, default_value = "complete")]
    preset: String,
    /// Sample id; defaults to the image file stem.
    #[arg(long)]
    id: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL manifest of {id, image, question, answer?}.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated presets; defaults to all.
    #[arg(long, value_delimiter = ',')]
    presets: Vec<String>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    ablation_csv: PathBuf,
    /// Comparisons in the Bonferroni family; defaults to the number made.
    #[arg(long)]
    m: Option<usize>,
    /// Baseline configuration; defaults to `basic`, else the first in the file.
    #[arg(long)]
    baseline: Option<String>,
    /// Use Welch's unequal-variance test instead of the pooled test.
    #[arg(long)]
    welch: bool,
    /// Also write the comparison table as CSV.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["record", "ablation_csv"])))]
struct RenderArgs {
    /// Pipeline record JSON; renders its panels.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Ablation CSV; renders radar.png from per-configuration means.
    #[arg(long)]
    ablation_csv: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Configuration supplying render settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrationArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Render(a) => cmd_render(a),
        Command::CalibrationManifest(a) => cmd_calibration(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn write_panels(record: &PipelineRecord, spec: &OverlaySpec, dir: &Path) -> Result<PathBuf> {
    let set = record_panels(record, spec)?;
    for (name, img) in set.named().into_iter().skip(1) {
        save_png(img, &dir.join(format!("{}_{name}.png", record.sample_id)))?;
    }
    let panel = dir.join(format!("{}_panel.png", record.sample_id));
    save_png(&compose_panel(&set, PANEL_GUTTER), &panel)?;
    Ok(panel)
}

fn sample_id_for(image: &Path, id: Option<String>) -> Result<String> {
    let id = id.unwrap_or_else(|| {
        image
            .file_stem()
            .map(|s| {
                s.to_string_lossy()
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || "_-.".contains(c) { c } else { '_' })
                    .collect()
            })
            .unwrap_or_default()
    });
    if !valid_sample_id(&id) {
        return Err(Error::Config(format!("invalid sample id {id:?}")));
    }
    Ok(id)
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let loaded = load_config(a.config.as_deref())?;
    let preset = loaded.registry.resolve(&a.preset)?.clone();
    if !a.image.is_file() {
        return Err(Error::Config(format!("image file {} not found", a.image.display())));
    }
    if a.question.trim().is_empty() {
        return Err(Error::Config("question is empty".into()));
    }
    let sample = Sample {
        id: sample_id_for(&a.image, a.id)?,
        image: a.image.clone(),
        question: a.question.clone(),
        ground_truth: String::new(),
    };
    let outdir = a.out.unwrap_or_else(|| loaded.config.output_dir.clone());
    let backends = loaded.backends()?;
    let ctx = PipelineContext {
        backends: &backends,
        resources: &loaded.resources,
        options: &loaded.config.pipeline,
    };
    let record = run_sample(&sample, &preset, &ctx);
    let path = record_path(&outdir, &record);
    persist_record(&record, &path)?;
    let panel = write_panels(&record, &loaded.overlay, path.parent().unwrap_or(&outdir))?;

    println!("{}", record.unified_answer);
    println!("composite: {:.3}", record.scores.composite);
    println!("degradation: {}", record.degradation.as_str());
    println!("record: {}", path.display());
    println!("panel: {}", panel.display());
    if record.total_outage() {
        eprintln!("error: no model produced an answer");
        return Ok(EXIT_OUTAGE);
    }
    Ok(0)
}

fn cmd_ablate(a: AblateArgs) -> Result<u8> {
    let loaded = load_config(a.config.as_deref())?;
    let presets = if a.presets.is_empty() {
        loaded.registry.all().to_vec()
    } else {
        loaded.registry.resolve_all(&a.presets)?
    };
    let workers = a.workers.unwrap_or(loaded.config.workers);
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let samples = load_manifest(&a.manifest)?;
    let outdir = a.out.unwrap_or_else(|| loaded.config.output_dir.clone());
    let backends = loaded.backends()?;
    let ctx = PipelineContext {
        backends: &backends,
        resources: &loaded.resources,
        options: &loaded.config.pipeline,
    };
    let results = run_ablation(&samples, &presets, &ctx, workers)?;
    write_ablation(&outdir, &results)?;
    print!("{}", summary_table(&summarize(&ablation_rows(&results))));
    println!("wrote {}", outdir.join(ABLATION_CSV).display());
    let outages = results
        .iter()
        .flat_map(|p| &p.records)
        .filter(|r| r.total_outage())
        .count();
    if outages > 0 {
        eprintln!("error: {outages} records had no answer from any model");
        return Ok(EXIT_OUTAGE);
    }
    Ok(0)
}

fn cmd_stats(a: StatsArgs) -> Result<u8> {
    let rows = read_ablation_csv(&a.ablation_csv)?;
    let order: Vec<String> = summarize(&rows).into_iter().map(|s| s.config).collect();
    if order.len() < 2 {
        return Err(Error::Config(format!(
            "{} holds {} configuration(s); nothing to compare",
            a.ablation_csv.display(),
            order.len()
        )));
    }
    let baseline = match a.baseline {
        Some(b) if order.contains(&b) => b,
        Some(b) => {
            return Err(Error::Config(format!(
                "baseline {b} not in {}; found {}",
                a.ablation_csv.display(),
                order.join(", ")
            )))
        }
        None if order.iter().any(|c| c == "basic") => "basic".to_string(),
        None => order[0].clone(),
    };
    let pairs: Vec<(String, String)> = order
        .iter()
        .filter(|c| **c != baseline)
        .map(|c| (baseline.clone(), c.clone()))
        .collect();
    let m = a.m.unwrap_or(pairs.len());
    if m == 0 {
        return Err(Error::Config("--m must be at least 1".into()));
    }
    let kind = if a.welch { TTestKind::Welch } else { TTestKind::Student };
    let report = compare_configurations(&composites_by_config(&rows), &pairs, m, kind)?;
    print!("{}", report_text(&report));
    if let Some(p) = a.csv_out {
        std::fs::write(&p, report_csv(&report)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(0)
}

fn cmd_render(a: RenderArgs) -> Result<u8> {
    if let Some(rec) = a.record {
        let loaded = load_config(a.config.as_deref())?;
        let record = load_record(&rec)?;
        let panel = write_panels(&record, &loaded.overlay, &a.out)?;
        println!("panel: {}", panel.display());
    } else if let Some(csv) = a.ablation_csv {
        let summaries = summarize(&read_ablation_csv(&csv)?);
        let series: Vec<_> = summaries.into_iter().map(|s| (s.config, s.means)).collect();
        let img = render_radar(&series)?;
        let path = a.out.join("radar.png");
        save_png(&img, &path)?;
        println!("radar: {}", path.display());
    }
    Ok(0)
}

fn cmd_calibration(a: CalibrationArgs) -> Result<u8> {
    let path = calibration_manifest(&a.out, a.samples)?;
    println!("manifest: {}", path.display());
    Ok(0)
}
