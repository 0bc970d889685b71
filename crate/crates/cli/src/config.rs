//! JSON configuration: parsing, `${VAR}` interpolation, path resolution and
//! full validation before any backend is contacted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use xvqa_core::backends::{
    Backends, CalibratedLlm, CalibratedVqa, CalibrationTargets, FaultSet, HttpBackend, LlmBackend,
    MockLlm, MockVqa, Recorder, Replay, RetryPolicy, VqaBackend, WithFaults,
};
use xvqa_core::pipeline::{PipelineOptions, PresetFlags, PresetRegistry};
use xvqa_core::reasoning::STEP_COUNT;
use xvqa_core::render::{Colormap, OverlaySpec};
use xvqa_core::resources::{ResourcePaths, TextResources};
use xvqa_core::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockFaults {
    pub vqa_answer: bool,
    pub attention: bool,
    pub llm: bool,
}

impl From<MockFaults> for FaultSet {
    fn from(f: MockFaults) -> Self {
        FaultSet {
            vqa_answer: f.vqa_answer,
            attention: f.attention,
            llm: f.llm,
        }
    }
}

/// One model endpoint.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Http {
        url: String,
        #[serde(default)]
        token: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        /// Append every exchange to this replay fixture.
        #[serde(default)]
        record_to: Option<PathBuf>,
    },
    Mock {
        #[serde(default)]
        seed: u64,
        /// Serve reduced heatmaps instead of raw tensors.
        #[serde(default)]
        heatmap_variant: bool,
        #[serde(default)]
        fail: MockFaults,
    },
    Replay {
        path: PathBuf,
    },
    Calibrated {
        #[serde(default)]
        step_confidences: Option<[f64; STEP_COUNT]>,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock {
            seed: 0,
            heatmap_variant: false,
            fail: MockFaults::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub vqa: BackendSpec,
    pub reformulator: BackendSpec,
    pub integrator: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub opacity: f64,
    pub box_stroke: u32,
    pub box_color: [u8; 3],
    pub label_scale: u32,
    pub colormap: Option<PathBuf>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let d = OverlaySpec::default();
        Self {
            opacity: d.opacity,
            box_stroke: d.box_stroke,
            box_color: d.box_color,
            label_scale: d.label_scale,
            colormap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub backends: BackendsConfig,
    pub pipeline: PipelineOptions,
    /// Extra presets by name.
    pub presets: BTreeMap<String, PresetFlags>,
    pub resources: ResourcePaths,
    pub render: RenderConfig,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            backends: BackendsConfig::default(),
            pipeline: PipelineOptions::default(),
            presets: BTreeMap::new(),
            resources: ResourcePaths::default(),
            render: RenderConfig::default(),
            output_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// Replaces every `${NAME}` in string values. `$${` escapes a literal `${`.
pub fn interpolate(value: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match value {
        Value::String(s) => *s = interpolate_str(s, lookup)?,
        Value::Array(items) => {
            for v in items {
                interpolate(v, lookup)?;
            }
        }
        Value::Object(map) => {
            for v in map.values_mut() {
                interpolate(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn interpolate_str(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find("${") {
        if rest[..i].ends_with('$') {
            out.push_str(&rest[..i - 1]);
            out.push_str("${");
            rest = &rest[i + 2..];
            continue;
        }
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::Config(format!("unterminated ${{ in {s:?}")))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Config(format!("bad variable name {name:?}")));
        }
        let v = lookup(name)
            .ok_or_else(|| Error::Config(format!("environment variable {name} is not set")))?;
        out.push_str(&v);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Everything a command needs, validated.
pub struct Loaded {
    pub config: CliConfig,
    pub registry: PresetRegistry,
    pub resources: TextResources,
    pub overlay: OverlaySpec,
}

impl Loaded {
    pub fn backends(&self) -> Result<Backends> {
        let b = &self.config.backends;
        Ok(Backends {
            vqa: vqa_backend(&b.vqa)?,
            reformulator: llm_backend(&b.reformulator, Role::Reformulator, &self.resources)?,
            integrator: llm_backend(&b.integrator, Role::Integrator, &self.resources)?,
        })
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

fn resolve_backend(base: &Path, spec: &mut BackendSpec) {
    match spec {
        BackendSpec::Http { record_to, .. } => resolve_opt(base, record_to),
        BackendSpec::Replay { path } => resolve(base, path),
        _ => {}
    }
}

fn check_backend(role: &str, spec: &BackendSpec) -> Result<()> {
    match spec {
        BackendSpec::Http { url, .. } => {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(Error::Config(format!("backends.{role}.url must start with http:// or https://")));
            }
        }
        BackendSpec::Replay { path } => {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "backends.{role}: replay fixture {} does not exist",
                    path.display()
                )));
            }
        }
        BackendSpec::Calibrated {
            step_confidences: Some(c),
        } if c.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) => {
            return Err(Error::Config(format!(
                "backends.{role}.step_confidences must lie in (0, 1]"
            )));
        }
        _ => {}
    }
    Ok(())
}

/// Parses and validates a config document. Relative paths resolve against
/// `base`.
pub fn parse_config(text: &str, base: &Path, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Loaded> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    interpolate(&mut value, lookup)?;
    let mut config: CliConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;

    resolve(base, &mut config.output_dir);
    let r = &mut config.resources;
    for p in [
        &mut r.lexicon,
        &mut r.stopwords,
        &mut r.structure_cues,
        &mut r.discourse_cues,
        &mut r.flow_guidance,
        &mut r.reformulate_template,
        &mut r.reasoning_template,
        &mut r.unified_template,
    ] {
        resolve_opt(base, p);
    }
    resolve_opt(base, &mut config.render.colormap);
    resolve_backend(base, &mut config.backends.vqa);
    resolve_backend(base, &mut config.backends.reformulator);
    resolve_backend(base, &mut config.backends.integrator);

    config.pipeline.validate()?;
    if config.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    check_backend("vqa", &config.backends.vqa)?;
    check_backend("reformulator", &config.backends.reformulator)?;
    check_backend("integrator", &config.backends.integrator)?;
    let registry = PresetRegistry::with_custom(&config.presets)?;
    let resources = TextResources::load(&config.resources)?;
    let colormap = match &config.render.colormap {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Colormap::parse(&text)?
        }
        None => Colormap::builtin(),
    };
    let overlay = OverlaySpec {
        colormap,
        opacity: config.render.opacity,
        box_stroke: config.render.box_stroke,
        box_color: config.render.box_color,
        label_scale: config.render.label_scale,
    };
    overlay.validate()?;
    Ok(Loaded {
        config,
        registry,
        resources,
        overlay,
    })
}

/// Reads `path`, or uses all defaults when no file is given.
pub fn load_config(path: Option<&Path>) -> Result<Loaded> {
    let env = |k: &str| std::env::var(k).ok();
    match path {
        None => parse_config("{}", Path::new("."), &env),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let base = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            parse_config(&text, base, &env)
        }
    }
}

#[derive(Clone, Copy)]
enum Role {
    Reformulator,
    Integrator,
}

fn calibration(step_confidences: &Option<[f64; STEP_COUNT]>) -> CalibrationTargets {
    let t = CalibrationTargets::ablation_reference();
    match step_confidences {
        Some(c) => t.with_step_confidences(*c),
        None => t,
    }
}

fn vqa_backend(spec: &BackendSpec) -> Result<Box<dyn VqaBackend>> {
    Ok(match spec {
        BackendSpec::Http {
            url,
            token,
            retry,
            record_to,
        } => {
            let http = HttpBackend::new(url.clone(), token.clone(), *retry);
            match record_to {
                Some(p) => Box::new(Recorder::create(http, p)?),
                None => Box::new(http),
            }
        }
        BackendSpec::Mock {
            seed,
            heatmap_variant,
            fail,
        } => {
            let mut m = MockVqa::new(*seed);
            if *heatmap_variant {
                m = m.with_heatmap_variant();
            }
            Box::new(WithFaults::new(m, (*fail).into()))
        }
        BackendSpec::Replay { path } => Box::new(Replay::load(path)?),
        BackendSpec::Calibrated { step_confidences } => {
            Box::new(CalibratedVqa::new(&calibration(step_confidences)))
        }
    })
}

fn llm_backend(spec: &BackendSpec, role: Role, res: &TextResources) -> Result<Box<dyn LlmBackend>> {
    Ok(match spec {
        BackendSpec::Http {
            url,
            token,
            retry,
            record_to,
        } => {
            let http = HttpBackend::new(url.clone(), token.clone(), *retry);
            match record_to {
                Some(p) => Box::new(Recorder::create(http, p)?),
                None => Box::new(http),
            }
        }
        BackendSpec::Mock { seed, fail, .. } => {
            let m = match role {
                Role::Reformulator => MockLlm::reformulator(*seed),
                Role::Integrator => MockLlm::integrator(*seed),
            };
            Box::new(WithFaults::new(m, (*fail).into()))
        }
        BackendSpec::Replay { path } => Box::new(Replay::load(path)?),
        BackendSpec::Calibrated { step_confidences } => {
            Box::new(CalibratedLlm::new(calibration(step_confidences), res)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: BTreeMap<String, String> =
            pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn interpolation() {
        let e = env(&[("TOKEN", "abc"), ("HOST", "h")]);
        assert_eq!(interpolate_str("Bearer ${TOKEN}", &e).unwrap(), "Bearer abc");
        assert_eq!(interpolate_str("http://${HOST}:${HOST}", &e).unwrap(), "http://h:h");
        assert_eq!(interpolate_str("$${TOKEN}", &e).unwrap(), "${TOKEN}");
        assert!(interpolate_str("${MISSING}", &e).unwrap_err().to_string().contains("MISSING"));
        assert!(interpolate_str("${TOKEN", &e).is_err());
        assert!(interpolate_str("${a-b}", &e).is_err());
    }

    #[test]
    fn defaults_are_mocks() {
        let l = parse_config("{}", Path::new("/tmp"), &env(&[])).unwrap();
        assert_eq!(l.config.backends.vqa, BackendSpec::default());
        assert_eq!(l.config.output_dir, PathBuf::from("/tmp/out"));
        assert!(l.backends().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = env(&[]);
        for doc in [
            r#"{"bogus": 1}"#,
            r#"{"backends": {"vqa": {"kind": "mock", "sede": 1}}}"#,
            r#"{"backends": {"vqa": {"kind": "grpc"}}}"#,
            r#"{"pipeline": {"extraction": {"threshold": 0.25, "x": 1}}}"#,
            r#"{"render": {"opacity": 0.5, "alpha": 1}}"#,
        ] {
            assert!(matches!(parse_config(doc, Path::new("."), &e), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn tokens_come_from_the_environment() {
        let doc = r#"{"backends": {"vqa": {"kind": "http", "url": "http://127.0.0.1:9", "token": "${VQA_TOKEN}"}}}"#;
        let l = parse_config(doc, Path::new("."), &env(&[("VQA_TOKEN", "s3cret")])).unwrap();
        match &l.config.backends.vqa {
            BackendSpec::Http { token, .. } => assert_eq!(token.as_deref(), Some("s3cret")),
            other => panic!("{other:?}"),
        }
        assert!(parse_config(doc, Path::new("."), &env(&[])).is_err());
    }

    #[test]
    fn semantic_validation() {
        let e = env(&[]);
        for doc in [
            r#"{"backends": {"vqa": {"kind": "http", "url": "ftp://x"}}}"#,
            r#"{"backends": {"vqa": {"kind": "replay", "path": "/nonexistent/fixture.jsonl"}}}"#,
            r#"{"backends": {"integrator": {"kind": "calibrated", "step_confidences": [0.8, 0.8, 0.8, 0.8, 0.8, 1.5]}}}"#,
            r#"{"workers": 0}"#,
            r#"{"render": {"opacity": 2.0}}"#,
            r#"{"presets": {"basic": {}}}"#,
            r#"{"presets": {"odd": {"bounding_boxes": true}}}"#,
            r#"{"resources": {"lexicon": "/nonexistent/lexicon.txt"}}"#,
        ] {
            assert!(parse_config(doc, Path::new("."), &e).is_err(), "{doc}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let doc = r#"{"output_dir": "runs", "backends": {"vqa": {"kind": "http", "url": "http://x", "record_to": "rec.jsonl"}}}"#;
        let l = parse_config(doc, Path::new("/cfg"), &env(&[])).unwrap();
        assert_eq!(l.config.output_dir, PathBuf::from("/cfg/runs"));
        match &l.config.backends.vqa {
            BackendSpec::Http { record_to, .. } => assert_eq!(record_to.as_deref(), Some(Path::new("/cfg/rec.jsonl"))),
            other => panic!("{other:?}"),
        }
    }
}
