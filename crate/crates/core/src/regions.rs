//! Region extraction from a normalized heatmap.
//!
//! Threshold, label connected components, drop small components, score each
//! by its mean attention, keep the best few, and pad their boxes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionHeatmap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// N, S, E, W neighbours.
    #[default]
    Four,
    /// All eight neighbours.
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionParams {
    pub threshold: f64,
    pub min_area: usize,
    pub max_regions: usize,
    pub expansion: f64,
    pub connectivity: Connectivity,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            min_area: 6,
            max_regions: 5,
            expansion: 0.12,
            connectivity: Connectivity::Four,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        if self.min_area < 1 {
            return Err(Error::Config("min_area must be at least 1".into()));
        }
        if self.max_regions < 1 {
            return Err(Error::Config("max_regions must be at least 1".into()));
        }
        if !(self.expansion >= 0.0 && self.expansion < 1.0) {
            return Err(Error::Config(format!(
                "expansion must lie in [0,1), got {}",
                self.expansion
            )));
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle; `x`, `y` are the inclusive top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
}

/// A scored, expanded region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox<T> {
    pub x: usize,
    pub y: usize,
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
    pub score: T,
    pub rank: usize,
    pub area_px: usize,
}

impl<T> RegionBox<T> {
    pub fn pixel_box(&self) -> PixelBox {
        PixelBox {
            x: self.x,
            y: self.y,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Label grid: 0 is background, components are numbered `1..=count` in
/// raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

/// Strict threshold: a pixel is set iff its value exceeds `threshold`.
pub fn threshold_mask<T: Scalar>(hm: &AttentionHeatmap<T>, threshold: T) -> Result<Mask> {
    hm.validate_normalized()?;
    Ok(Mask {
        height: hm.height,
        width: hm.width,
        bits: hm.values.iter().map(|&v| v > threshold).collect(),
    })
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass connected component labelling.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> Labels {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSet { parent: vec![0] };

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                push(provisional[r * w + c - 1]);
            }
            if r > 0 {
                push(provisional[(r - 1) * w + c]);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        push(provisional[(r - 1) * w + c - 1]);
                    }
                    if c + 1 < w {
                        push(provisional[(r - 1) * w + c + 1]);
                    }
                }
            }
            let label = if n == 0 {
                let l = sets.parent.len() as u32;
                sets.parent.push(l);
                l
            } else {
                let m = *neighbours[..n].iter().min().unwrap();
                for &other in &neighbours[..n] {
                    sets.union(m, other);
                }
                m
            };
            provisional[r * w + c] = label;
        }
    }

    // Second pass: resolve roots and renumber densely in raster order.
    let mut remap = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; h * w];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = sets.find(p) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        labels[i] = remap[root];
    }
    Labels {
        height: h,
        width: w,
        labels,
        count: next as usize,
    }
}

/// Mean heatmap value over a set of `(row, col)` pixels.
pub fn region_score<T: Scalar>(hm: &AttentionHeatmap<T>, pixels: &[(usize, usize)]) -> Result<T> {
    if pixels.is_empty() {
        return Err(Error::invalid("region has no pixels"));
    }
    let mut sum = T::zero();
    for &(r, c) in pixels {
        if r >= hm.height || c >= hm.width {
            return Err(Error::invalid(format!("pixel ({r},{c}) outside heatmap")));
        }
        sum = sum + hm.get(r, c);
    }
    Ok(sum / T::from_count(pixels.len()))
}

// Snap values within rounding noise of an integer before floor/ceil.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Grows a box by `expansion` of its size per axis, half on each side, and
/// clamps it to the image.
pub fn expand_box(b: PixelBox, expansion: f64, image_width: usize, image_height: usize) -> PixelBox {
    fn axis(start: usize, len: usize, expansion: f64, limit: usize) -> (usize, usize) {
        let half = len as f64 * expansion / 2.0;
        let lo = snap(start as f64 - half).floor().max(0.0) as usize;
        let hi = (snap((start + len) as f64 + half).ceil() as usize).min(limit);
        let lo = lo.min(start);
        let hi = hi.max((start + len).min(limit));
        (lo, hi - lo)
    }
    let (x, width) = axis(b.x, b.width, expansion, image_width);
    let (y, height) = axis(b.y, b.height, expansion, image_height);
    PixelBox {
        x,
        y,
        width,
        height,
    }
}

#[derive(Debug, Clone)]
struct Component<T> {
    pixels: Vec<(usize, usize)>,
    bbox: PixelBox,
    score: T,
}

fn collect_components(labels: &Labels) -> Vec<Vec<(usize, usize)>> {
    let mut comps = vec![Vec::new(); labels.count];
    for r in 0..labels.height {
        for c in 0..labels.width {
            let l = labels.labels[r * labels.width + c];
            if l != 0 {
                comps[(l - 1) as usize].push((r, c));
            }
        }
    }
    comps
}

fn bounding_box(pixels: &[(usize, usize)]) -> PixelBox {
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for &(r, c) in pixels {
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
    }
    PixelBox {
        x: c0,
        y: r0,
        width: c1 - c0 + 1,
        height: r1 - r0 + 1,
    }
}

/// Extracts up to `params.max_regions` ranked regions.
pub fn extract_regions<T: Scalar>(
    hm: &AttentionHeatmap<T>,
    params: &ExtractionParams,
) -> Result<Vec<RegionBox<T>>> {
    params.validate()?;
    let mask = threshold_mask(hm, T::lit(params.threshold))?;
    let labels = label_components(&mask, params.connectivity);

    let mut comps = Vec::new();
    for pixels in collect_components(&labels) {
        if pixels.len() < params.min_area {
            continue;
        }
        let score = region_score(hm, &pixels)?;
        let bbox = bounding_box(&pixels);
        comps.push(Component {
            pixels,
            bbox,
            score,
        });
    }

    comps.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.bbox.y.cmp(&b.bbox.y))
            .then(a.bbox.x.cmp(&b.bbox.x))
    });
    comps.truncate(params.max_regions);

    Ok(comps
        .into_iter()
        .enumerate()
        .map(|(i, comp)| {
            let b = expand_box(comp.bbox, params.expansion, hm.width, hm.height);
            RegionBox {
                x: b.x,
                y: b.y,
                width: b.width,
                height: b.height,
                score: comp.score,
                rank: i + 1,
                area_px: comp.pixels.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::HeatmapSource;

    fn heatmap(h: usize, w: usize, values: Vec<f64>) -> AttentionHeatmap<f64> {
        AttentionHeatmap {
            height: h,
            width: w,
            values,
            normalized: true,
            source: HeatmapSource::EnhancedGradcam,
            target_layer: String::new(),
        }
    }

    fn mask_from(rows: &[&str]) -> Mask {
        let height = rows.len();
        let width = rows[0].len();
        Mask {
            height,
            width,
            bits: rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect(),
        }
    }

    #[test]
    fn threshold_is_strict() {
        let hm = heatmap(1, 4, vec![0.1, 0.25, 0.2500001, 1.0]);
        let m = threshold_mask(&hm, 0.25).unwrap();
        assert_eq!(m.bits, vec![false, false, true, true]);

        let low = heatmap(2, 2, vec![0.25, 0.0, 0.1, 0.2]);
        assert_eq!(threshold_mask(&low, 0.25).unwrap().count(), 0);

        let full = heatmap(2, 2, vec![1.0; 4]);
        assert_eq!(threshold_mask(&full, 0.25).unwrap().count(), 4);
    }

    #[test]
    fn threshold_requires_normalized() {
        let mut hm = heatmap(1, 1, vec![0.5]);
        hm.normalized = false;
        assert!(threshold_mask(&hm, 0.25).is_err());
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = mask_from(&["...", "..."]);
        assert_eq!(label_components(&m, Connectivity::Four).count, 0);
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = mask_from(&["#.", ".#"]);
        assert_eq!(label_components(&m, Connectivity::Four).count, 2);
        assert_eq!(label_components(&m, Connectivity::Eight).count, 1);
    }

    #[test]
    fn u_shape_merges_into_one_label() {
        let m = mask_from(&["#.#", "#.#", "###"]);
        let l = label_components(&m, Connectivity::Four);
        assert_eq!(l.count, 1);
        assert!(l
            .labels
            .iter()
            .zip(&m.bits)
            .all(|(&lab, &bit)| (lab == 1) == bit));
    }

    #[test]
    fn region_score_cases() {
        let hm = heatmap(2, 2, vec![0.4, 0.6, 0.8, 1.0]);
        let all = [(0, 0), (0, 1), (1, 0), (1, 1)];
        assert!((region_score(&hm, &all).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(region_score(&hm, &[(1, 0)]).unwrap(), 0.8);
        let flat = heatmap(1, 3, vec![0.7; 3]);
        assert!((region_score(&flat, &[(0, 0), (0, 2)]).unwrap() - 0.7).abs() < 1e-12);
        assert!(region_score(&hm, &[]).is_err());
        assert!(region_score(&hm, &[(2, 0)]).is_err());
    }

    #[test]
    fn expand_box_cases() {
        let b = PixelBox {
            x: 100,
            y: 100,
            width: 50,
            height: 50,
        };
        assert_eq!(expand_box(b, 0.0, 224, 224), b);
        // 12% of 50 is 6 pixels per axis, 3 per side.
        assert_eq!(
            expand_box(b, 0.12, 224, 224),
            PixelBox {
                x: 97,
                y: 97,
                width: 56,
                height: 56
            }
        );
        let corner = PixelBox {
            x: 0,
            y: 0,
            width: 50,
            height: 50,
        };
        assert_eq!(
            expand_box(corner, 0.12, 224, 224),
            PixelBox {
                x: 0,
                y: 0,
                width: 53,
                height: 53
            }
        );
        // odd growth rounds outward on both sides
        let odd = PixelBox {
            x: 10,
            y: 10,
            width: 25,
            height: 10,
        };
        let e = expand_box(odd, 0.12, 100, 100);
        assert_eq!((e.x, e.width), (8, 29));
        assert_eq!((e.y, e.height), (9, 12));
        let edge = PixelBox {
            x: 200,
            y: 210,
            width: 24,
            height: 14,
        };
        let e = expand_box(edge, 0.5, 224, 224);
        assert_eq!(e.x + e.width, 224);
        assert_eq!(e.y + e.height, 224);
    }

    #[test]
    fn all_zero_heatmap_yields_nothing() {
        let hm = heatmap(8, 8, vec![0.0; 64]);
        assert!(extract_regions(&hm, &ExtractionParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn two_plateaus_rank_by_score() {
        let mut v = vec![0.0; 256];
        // 3x3 plateau at 0.9
        for r in 2..5 {
            for c in 2..5 {
                v[r * 16 + c] = 0.9;
            }
        }
        // 3x4 plateau at 0.5
        for r in 9..12 {
            for c in 8..12 {
                v[r * 16 + c] = 0.5;
            }
        }
        let hm = heatmap(16, 16, v);
        let regions = extract_regions(&hm, &ExtractionParams::default()).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].rank, 1);
        assert!((regions[0].score - 0.9).abs() < 1e-12);
        assert_eq!(regions[0].area_px, 9);
        assert!((regions[1].score - 0.5).abs() < 1e-12);
        assert_eq!(regions[1].area_px, 12);
    }

    #[test]
    fn truncates_to_five() {
        let mut v = vec![0.0; 20 * 20];
        // seven 2x3 blobs with distinct levels
        for b in 0..7 {
            let (r0, c0) = ((b / 3) * 6, (b % 3) * 6);
            for r in r0..r0 + 2 {
                for c in c0..c0 + 3 {
                    v[r * 20 + c] = 0.3 + 0.1 * b as f64;
                }
            }
        }
        let hm = heatmap(20, 20, v);
        let regions = extract_regions(&hm, &ExtractionParams::default()).unwrap();
        assert_eq!(regions.len(), 5);
        let scores: Vec<f64> = regions.iter().map(|r| r.score).collect();
        let expected = [0.9, 0.8, 0.7, 0.6, 0.5];
        for (s, e) in scores.iter().zip(expected) {
            assert!((s - e).abs() < 1e-9);
        }
    }

    #[test]
    fn small_components_are_dropped() {
        let mut v = vec![0.0; 100];
        for c in 0..5 {
            v[c] = 1.0;
        }
        let hm = heatmap(10, 10, v);
        assert!(extract_regions(&hm, &ExtractionParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn equal_scores_break_ties_by_position() {
        let mut v = vec![0.0; 100];
        for (r0, c0) in [(6, 1), (1, 6), (1, 1)] {
            for r in r0..r0 + 2 {
                for c in c0..c0 + 3 {
                    v[r * 10 + c] = 0.8;
                }
            }
        }
        let hm = heatmap(10, 10, v);
        let params = ExtractionParams {
            expansion: 0.0,
            ..Default::default()
        };
        let regions = extract_regions(&hm, &params).unwrap();
        let corners: Vec<(usize, usize)> = regions.iter().map(|r| (r.y, r.x)).collect();
        assert_eq!(corners, vec![(1, 1), (1, 6), (6, 1)]);
    }

    #[test]
    fn params_validation() {
        let bad = [
            ExtractionParams {
                threshold: 0.0,
                ..Default::default()
            },
            ExtractionParams {
                threshold: 1.0,
                ..Default::default()
            },
            ExtractionParams {
                min_area: 0,
                ..Default::default()
            },
            ExtractionParams {
                max_regions: 0,
                ..Default::default()
            },
            ExtractionParams {
                expansion: 1.0,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(ExtractionParams::default().validate().is_ok());
    }
}
