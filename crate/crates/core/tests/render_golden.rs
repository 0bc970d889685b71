//! Pinned raster digests for a synthetic fixture. A digest covers the image
//! dimensions and RGB bytes, so encoder changes do not disturb it.

use image::{Rgb, RgbImage};
use xvqa_core::attention::{AttentionHeatmap, HeatmapSource};
use xvqa_core::evaluation::EvaluationScores;
use xvqa_core::regions::{extract_regions, ExtractionParams};
use xvqa_core::render::{
    compose_panel, raster_digest, render_boxes, render_heatmap_overlay, render_panels, render_radar,
    OverlaySpec, PANEL_GUTTER,
};

const W: usize = 96;
const H: usize = 72;

fn fixture_image() -> RgbImage {
    RgbImage::from_fn(W as u32, H as u32, |x, y| {
        Rgb([(x * 2) as u8, (y * 3) as u8, ((x + y) % 64 * 4) as u8])
    })
}

/// Two Gaussian blobs, the left one brighter.
fn fixture_heatmap() -> AttentionHeatmap<f64> {
    let blob = |x: f64, y: f64, cx: f64, cy: f64, s: f64| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
    let mut values = Vec::with_capacity(W * H);
    for y in 0..H {
        for x in 0..W {
            let (xf, yf) = (x as f64, y as f64);
            values.push(blob(xf, yf, 28.0, 30.0, 8.0) + 0.6 * blob(xf, yf, 70.0, 48.0, 6.0));
        }
    }
    let peak = values.iter().cloned().fold(0.0, f64::max);
    AttentionHeatmap {
        height: H,
        width: W,
        values: values.into_iter().map(|v| v / peak).collect(),
        normalized: true,
        source: HeatmapSource::EnhancedGradcam,
        target_layer: "fixture".into(),
    }
}

fn scores(t: f64, s: f64, c: f64, a: f64, r: f64) -> EvaluationScores {
    EvaluationScores {
        terminology: t,
        structure: s,
        coherence: c,
        attention_quality: a,
        reasoning_confidence: r,
        composite: 0.0,
    }
}

fn digests() -> [(&'static str, String); 5] {
    let img = fixture_image();
    let hm = fixture_heatmap();
    let regions = extract_regions(&hm, &ExtractionParams::default()).unwrap();
    assert_eq!(regions.len(), 2);
    let spec = OverlaySpec::default();
    let overlay = render_heatmap_overlay(&img, &hm, &spec).unwrap();
    let boxes = render_boxes(&img, &regions, &spec).unwrap();
    let panel = compose_panel(&render_panels(&img, Some(&hm), &regions, &spec).unwrap(), PANEL_GUTTER);
    let banner = compose_panel(&render_panels(&img, None, &[], &spec).unwrap(), PANEL_GUTTER);
    let radar = render_radar(&[
        ("basic".into(), scores(0.4, 0.3, 0.6, 0.0, 0.0)),
        ("complete".into(), scores(0.6, 0.7, 0.8, 0.95, 0.89)),
    ])
    .unwrap();
    [
        ("overlay", raster_digest(&overlay)),
        ("boxes", raster_digest(&boxes)),
        ("panel", raster_digest(&panel)),
        ("banner", raster_digest(&banner)),
        ("radar", raster_digest(&radar)),
    ]
}

const GOLDEN: [(&str, &str); 5] = [
    (
        "overlay",
        "e8392d31c59c8872cad7e392adcf65a5699ae01c4a89425f71d39336e6b46f64",
    ),
    (
        "boxes",
        "cc5550a16679a3a74bfbeb0a00b25ae904bc55eefb475cde3d016c158f7bcbf9",
    ),
    (
        "panel",
        "a2b0476abe4abff92c3ee27cec0f31735cba2b7fdd55bf3c258a3d96e71817c2",
    ),
    (
        "banner",
        "ff9ade7b0fb68869d299395318f3640a7f957abf72124c65402729be15b14a2a",
    ),
    (
        "radar",
        "80b6c6492b6b2425bb7be13d3ea3a7cea7278c8b8c8b98e8db03a2f80dc9c6e6",
    ),
];

#[test]
fn rasters_match_pinned_digests() {
    let got = digests();
    let changed: Vec<String> = got
        .iter()
        .zip(GOLDEN)
        .filter(|((_, d), (_, g))| d != g)
        .map(|((name, d), _)| format!("{name}: {d}"))
        .collect();
    assert!(changed.is_empty(), "digests changed:\n{}", changed.join("\n"));
}

#[test]
fn rendering_is_repeatable() {
    assert_eq!(digests(), digests());
}
