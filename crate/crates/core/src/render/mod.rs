//! PNG figures: heatmap overlays, region boxes, four-panel composites and
//! per-configuration radar charts. Every path is integer or fixed-order
//! float arithmetic, so identical inputs give identical pixels.

mod colormap;
mod font;

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use sha2::{Digest, Sha256};

use crate::attention::{upsample_heatmap, AttentionHeatmap};
use crate::error::{Error, Result};
use crate::evaluation::EvaluationScores;
use crate::pipeline::PipelineRecord;
use crate::regions::RegionBox;

pub use colormap::Colormap;
pub use font::{draw_text, text_height, text_width};

pub const NO_ATTENTION_BANNER: &str = "no attention";
pub const PANEL_GUTTER: u32 = 8;
const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [0, 0, 0];

/// Drawing parameters shared by every renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySpec {
    pub colormap: Colormap,
    /// Heatmap weight in the blend, in `[0,1]`.
    pub opacity: f64,
    /// Box stroke thickness, drawn inward from the box edge.
    pub box_stroke: u32,
    pub box_color: [u8; 3],
    /// Integer glyph magnification.
    pub label_scale: u32,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        Self {
            colormap: Colormap::builtin(),
            opacity: 0.45,
            box_stroke: 2,
            box_color: [0, 255, 0],
            label_scale: 1,
        }
    }
}

impl OverlaySpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Config(format!("opacity must be in [0,1], got {}", self.opacity)));
        }
        if self.box_stroke == 0 || self.label_scale == 0 {
            return Err(Error::Config("box stroke and label scale must be positive".into()));
        }
        Ok(())
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 over dimensions and raw RGB bytes; independent of the PNG
/// encoder.
pub fn raster_digest(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

fn blend(src: u8, over: u8, alpha: f64) -> u8 {
    ((1.0 - alpha) * src as f64 + alpha * over as f64).round() as u8
}

/// Alpha-blends the colormapped heatmap over `image`. A heatmap of another
/// size is resampled to the image first.
pub fn render_heatmap_overlay(
    image: &RgbImage,
    hm: &AttentionHeatmap<f64>,
    spec: &OverlaySpec,
) -> Result<RgbImage> {
    spec.validate()?;
    hm.validate_normalized()?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let resized;
    let hm = if hm.height == h && hm.width == w {
        hm
    } else {
        resized = upsample_heatmap(hm, h, w)?;
        &resized
    };
    if hm.height != h || hm.width != w || hm.values.len() != h * w {
        return Err(Error::invalid(format!(
            "heatmap is {}x{} after resize, image is {h}x{w}",
            hm.height, hm.width
        )));
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let c = spec.colormap.color(hm.values[y as usize * w + x as usize]);
        for (ch, col) in px.0.iter_mut().zip(c) {
            *ch = blend(*ch, col, spec.opacity);
        }
    }
    Ok(out)
}

pub fn region_label(r: &RegionBox<f64>) -> String {
    format!("r{} {:.2}", r.rank, r.score)
}

fn stroke_rect(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: [u8; 3]) {
    for x in x0..=x1 {
        img.put_pixel(x, y0, Rgb(color));
        img.put_pixel(x, y1, Rgb(color));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, Rgb(color));
        img.put_pixel(x1, y, Rgb(color));
    }
}

/// Strokes each box on its exact pixel extent and labels it with rank and
/// score. Labels go above the box, or just inside when there is no room.
/// Boxes are drawn after all labels so no label covers a stroke.
pub fn render_boxes(image: &RgbImage, regions: &[RegionBox<f64>], spec: &OverlaySpec) -> Result<RgbImage> {
    spec.validate()?;
    let (iw, ih) = (image.width() as usize, image.height() as usize);
    for r in regions {
        if r.width == 0 || r.height == 0 || r.x + r.width > iw || r.y + r.height > ih {
            return Err(Error::invalid(format!(
                "box r{} ({}, {}, {}, {}) exceeds {iw}x{ih}",
                r.rank, r.x, r.y, r.width, r.height
            )));
        }
    }
    let mut out = image.clone();
    let s = spec.label_scale;
    let lh = text_height(s) + 2;
    for r in regions {
        let label = region_label(r);
        let lw = text_width(&label, s) + 2;
        let ly = if r.y as u32 >= lh {
            r.y as u32 - lh
        } else {
            r.y as u32 + spec.box_stroke
        };
        let lx = if r.y as u32 >= lh {
            r.x as u32
        } else {
            r.x as u32 + spec.box_stroke
        };
        if lx < out.width() && ly < out.height() {
            let w = lw.min(out.width() - lx);
            let h = lh.min(out.height() - ly);
            draw_filled_rect_mut(&mut out, Rect::at(lx as i32, ly as i32).of_size(w, h), Rgb(BLACK));
            draw_text(&mut out, lx as i64 + 1, ly as i64 + 1, &label, s, WHITE);
        }
    }
    for r in regions {
        let (x0, y0) = (r.x as u32, r.y as u32);
        let (x1, y1) = ((r.x + r.width - 1) as u32, (r.y + r.height - 1) as u32);
        for t in 0..spec.box_stroke {
            if x0 + t > x1.saturating_sub(t) || y0 + t > y1.saturating_sub(t) {
                break;
            }
            stroke_rect(&mut out, x0 + t, y0 + t, x1 - t, y1 - t, spec.box_color);
        }
    }
    Ok(out)
}

fn with_banner(image: &RgbImage, text: &str) -> RgbImage {
    let mut out = image.clone();
    let h = (text_height(1) + 4).min(out.height());
    let w = out.width();
    if h > 0 && w > 0 {
        draw_filled_rect_mut(&mut out, Rect::at(0, 0).of_size(w, h), Rgb(BLACK));
    }
    draw_text(&mut out, 2, 2, text, 1, WHITE);
    out
}

/// The four views of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSet {
    pub original: RgbImage,
    pub boxes: RgbImage,
    pub heatmap: RgbImage,
    pub integrated: RgbImage,
}

impl PanelSet {
    /// `(name, image)` pairs in layout order.
    pub fn named(&self) -> [(&'static str, &RgbImage); 4] {
        [
            ("original", &self.original),
            ("boxes", &self.boxes),
            ("heatmap", &self.heatmap),
            ("integrated", &self.integrated),
        ]
    }
}

/// Without a heatmap every derived view is the original under a banner.
pub fn render_panels(
    image: &RgbImage,
    heatmap: Option<&AttentionHeatmap<f64>>,
    regions: &[RegionBox<f64>],
    spec: &OverlaySpec,
) -> Result<PanelSet> {
    match heatmap {
        None => {
            let b = with_banner(image, NO_ATTENTION_BANNER);
            Ok(PanelSet {
                original: image.clone(),
                boxes: b.clone(),
                heatmap: b.clone(),
                integrated: b,
            })
        }
        Some(hm) => {
            let overlay = render_heatmap_overlay(image, hm, spec)?;
            Ok(PanelSet {
                original: image.clone(),
                boxes: render_boxes(image, regions, spec)?,
                integrated: render_boxes(&overlay, regions, spec)?,
                heatmap: overlay,
            })
        }
    }
}

/// 2×2 grid on white: original, boxes / heatmap, integrated. Size is
/// `2W + 3g` by `2H + 3g`.
pub fn compose_panel(set: &PanelSet, gutter: u32) -> RgbImage {
    let (w, h) = set.original.dimensions();
    let mut out = RgbImage::from_pixel(2 * w + 3 * gutter, 2 * h + 3 * gutter, Rgb(WHITE));
    for (i, (_, img)) in set.named().iter().enumerate() {
        let ox = gutter + (i as u32 % 2) * (w + gutter);
        let oy = gutter + (i as u32 / 2) * (h + gutter);
        image::imageops::replace(&mut out, *img, ox as i64, oy as i64);
    }
    out
}

/// Loads the record's image and renders its four views.
pub fn record_panels(record: &PipelineRecord, spec: &OverlaySpec) -> Result<PanelSet> {
    let image = load_rgb(&record.image)?;
    let hm = record.heatmap.as_ref().map(|h| h.heatmap()).transpose()?;
    render_panels(&image, hm.as_ref(), &record.regions, spec)
}

pub fn render_panel(record: &PipelineRecord, spec: &OverlaySpec) -> Result<RgbImage> {
    Ok(compose_panel(&record_panels(record, spec)?, PANEL_GUTTER))
}

pub const RADAR_AXES: [&str; 5] = ["terminology", "structure", "coherence", "attention", "reasoning"];
pub const RADAR_WIDTH: u32 = 560;
pub const RADAR_HEIGHT: u32 = 420;
const RADAR_CENTER: (f64, f64) = (210.0, 215.0);
const RADAR_RADIUS: f64 = 150.0;
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn axis_values(s: &EvaluationScores) -> [f64; 5] {
    [s.terminology, s.structure, s.coherence, s.attention_quality, s.reasoning_confidence]
}

fn axis_point(k: usize, v: f64, center: (f64, f64), radius: f64) -> (f64, f64) {
    let a = -std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 5.0;
    (center.0 + radius * v * a.cos(), center.1 + radius * v * a.sin())
}

/// Polygon corners, first axis straight up, clockwise. Values are clamped
/// into `[0,1]`.
pub fn radar_vertices(s: &EvaluationScores, center: (f64, f64), radius: f64) -> [(f64, f64); 5] {
    let v = axis_values(s);
    std::array::from_fn(|k| axis_point(k, v[k].clamp(0.0, 1.0), center, radius))
}

fn polyline(img: &mut RgbImage, pts: &[(f64, f64)], color: [u8; 3], thick: bool) {
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        let offsets: &[(f32, f32)] = if thick { &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] } else { &[(0.0, 0.0)] };
        for (dx, dy) in offsets {
            draw_line_segment_mut(
                img,
                (a.0 as f32 + dx, a.1 as f32 + dy),
                (b.0 as f32 + dx, b.1 as f32 + dy),
                Rgb(color),
            );
        }
    }
}

/// One polygon per configuration over the five score axes, with a legend.
pub fn render_radar(series: &[(String, EvaluationScores)]) -> Result<RgbImage> {
    if series.is_empty() {
        return Err(Error::invalid("radar chart needs at least one configuration"));
    }
    let mut img = RgbImage::from_pixel(RADAR_WIDTH, RADAR_HEIGHT, Rgb(WHITE));
    let grey = [200, 200, 200];
    for level in [0.25, 0.5, 0.75, 1.0] {
        let ring: Vec<_> = (0..5).map(|k| axis_point(k, level, RADAR_CENTER, RADAR_RADIUS)).collect();
        polyline(&mut img, &ring, grey, false);
    }
    for (k, name) in RADAR_AXES.iter().enumerate() {
        let (x, y) = axis_point(k, 1.0, RADAR_CENTER, RADAR_RADIUS);
        draw_line_segment_mut(
            &mut img,
            (RADAR_CENTER.0 as f32, RADAR_CENTER.1 as f32),
            (x as f32, y as f32),
            Rgb(grey),
        );
        let (lx, ly) = axis_point(k, 1.0, RADAR_CENTER, RADAR_RADIUS + 14.0);
        let tw = text_width(name, 1) as f64;
        draw_text(
            &mut img,
            (lx - tw / 2.0).round() as i64,
            (ly - text_height(1) as f64 / 2.0).round() as i64,
            name,
            1,
            [60, 60, 60],
        );
    }
    for (i, (name, scores)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = radar_vertices(scores, RADAR_CENTER, RADAR_RADIUS);
        polyline(&mut img, &pts, color, true);
        for (x, y) in pts {
            draw_filled_rect_mut(
                &mut img,
                Rect::at(x.round() as i32 - 2, y.round() as i32 - 2).of_size(5, 5),
                Rgb(color),
            );
        }
        let ly = 30 + i as i32 * 16;
        draw_filled_rect_mut(&mut img, Rect::at(420, ly).of_size(10, 10), Rgb(color));
        draw_text(&mut img, 436, ly as i64 + 1, name, 1, BLACK);
    }
    Ok(img)
}
