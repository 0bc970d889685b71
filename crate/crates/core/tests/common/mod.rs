#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use xvqa_core::backends::{Backends, CalibratedLlm, CalibratedVqa, CalibrationTargets};
use xvqa_core::pipeline::{PresetRegistry, Preset};
use xvqa_core::resources::TextResources;

pub fn calibrated(targets: &CalibrationTargets, res: &TextResources) -> Backends {
    Backends {
        vqa: Box::new(CalibratedVqa::new(targets)),
        reformulator: Box::new(CalibratedLlm::new(targets.clone(), res).unwrap()),
        integrator: Box::new(CalibratedLlm::new(targets.clone(), res).unwrap()),
    }
}

pub fn all_presets() -> Vec<Preset> {
    PresetRegistry::default().all().to_vec()
}

pub fn preset(name: &str) -> Preset {
    PresetRegistry::default().resolve(name).unwrap().clone()
}

/// `n` small textured PNGs plus a JSONL manifest, ids `s000`...
pub fn mock_manifest(dir: &Path, n: usize) -> PathBuf {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let manifest = dir.join("manifest.jsonl");
    let mut f = std::fs::File::create(&manifest).unwrap();
    for i in 0..n {
        let (w, h) = (24 + (i % 5) as u32 * 8, 20 + (i % 3) as u32 * 8);
        let img = image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 9 + i as u32) as u8, (y * 7) as u8, (x ^ y) as u8])
        });
        let name = format!("img/s{i:03}.png");
        img.save(dir.join(&name)).unwrap();
        let q = ["Is there necrosis?", "What type of epithelium lines this gland?", "Are the nuclei atypical?"][i % 3];
        writeln!(f, r#"{{"id": "s{i:03}", "image": "{name}", "question": "{q}", "answer": "yes"}}"#).unwrap();
    }
    manifest
}
