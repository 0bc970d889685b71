//! Region extraction against a brute-force flood fill and exhaustive sort.

use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xvqa_core::attention::{normalize_heatmap, AttentionHeatmap, Grid};
use xvqa_core::regions::{
    extract_regions, label_components, threshold_mask, Connectivity, ExtractionParams, RegionBox,
};

#[derive(Debug, PartialEq)]
struct OracleRegion {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    score: f64,
    area: usize,
}

fn flood_components(hm: &AttentionHeatmap<f64>, tau: f64, eight: bool) -> Vec<BTreeSet<(usize, usize)>> {
    let (h, w) = (hm.height, hm.width);
    let on = |r: usize, c: usize| hm.values[r * w + c] > tau;
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !on(r, c) || seen[r * w + c] {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut q = VecDeque::from([(r, c)]);
            seen[r * w + c] = true;
            while let Some((y, x)) = q.pop_front() {
                comp.insert((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if on(ny, nx) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            q.push_back((ny, nx));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

fn oracle(hm: &AttentionHeatmap<f64>, p: &ExtractionParams) -> Vec<OracleRegion> {
    let eight = p.connectivity == Connectivity::Eight;
    let mut regions: Vec<(f64, usize, usize, OracleRegion)> = Vec::new();
    for comp in flood_components(hm, p.threshold, eight) {
        if comp.len() < p.min_area {
            continue;
        }
        let sum: f64 = comp.iter().map(|&(r, c)| hm.values[r * hm.width + c]).sum();
        let score = sum / comp.len() as f64;
        let y0 = comp.iter().map(|p| p.0).min().unwrap();
        let y1 = comp.iter().map(|p| p.0).max().unwrap();
        let x0 = comp.iter().map(|p| p.1).min().unwrap();
        let x1 = comp.iter().map(|p| p.1).max().unwrap();
        let grow = |lo: usize, hi_excl: usize, limit: usize| {
            let half = (hi_excl - lo) as f64 * p.expansion / 2.0;
            let a = ((lo as f64 - half).floor().max(0.0) as usize).min(lo);
            let b = ((hi_excl as f64 + half).ceil() as usize).min(limit).max(hi_excl);
            (a, b - a)
        };
        let (x, w) = grow(x0, x1 + 1, hm.width);
        let (y, h) = grow(y0, y1 + 1, hm.height);
        regions.push((score, y0, x0, OracleRegion { x, y, w, h, score, area: comp.len() }));
    }
    // exhaustive selection: repeatedly take the best remaining
    let mut picked = Vec::new();
    while picked.len() < p.max_regions && !regions.is_empty() {
        let mut best = 0;
        for i in 1..regions.len() {
            let (s, y, x, _) = &regions[i];
            let (bs, by, bx, _) = &regions[best];
            if s > bs || (s == bs && (y, x) < (by, bx)) {
                best = i;
            }
        }
        picked.push(regions.swap_remove(best).3);
    }
    picked
}

fn as_oracle(r: &RegionBox<f64>) -> OracleRegion {
    OracleRegion { x: r.x, y: r.y, w: r.width, h: r.height, score: r.score, area: r.area_px }
}

/// Blobs of random plateaus and ramps over a noisy floor, normalized.
fn random_heatmap(rng: &mut ChaCha8Rng) -> AttentionHeatmap<f64> {
    let h = rng.random_range(1..=32);
    let w = rng.random_range(1..=32);
    let mut v = vec![0.0f64; h * w];
    for x in v.iter_mut() {
        *x = if rng.random_bool(0.3) { rng.random_range(0.0..0.4) } else { 0.0 };
    }
    for _ in 0..rng.random_range(0..10) {
        let (cy, cx) = (rng.random_range(0..h), rng.random_range(0..w));
        let (ry, rx) = (rng.random_range(0..5), rng.random_range(0..5));
        let level = [0.25, 0.5, 0.9, 1.0, rng.random_range(0.2..1.0)][rng.random_range(0..5)];
        for y in cy.saturating_sub(ry)..(cy + ry + 1).min(h) {
            for x in cx.saturating_sub(rx)..(cx + rx + 1).min(w) {
                v[y * w + x] = f64::max(v[y * w + x], level);
            }
        }
    }
    normalize_heatmap(&Grid::new(h, w, v).unwrap()).unwrap()
}

#[test]
fn matches_flood_fill_oracle_on_random_heatmaps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut nonempty = 0;
    for case in 0..200 {
        let hm = random_heatmap(&mut rng);
        let connectivity = if case % 4 == 3 { Connectivity::Eight } else { Connectivity::Four };
        let p = ExtractionParams { connectivity, ..ExtractionParams::default() };
        let got: Vec<_> = extract_regions(&hm, &p).unwrap().iter().map(as_oracle).collect();
        let want = oracle(&hm, &p);
        assert_eq!(got, want, "case {case}");
        nonempty += usize::from(!want.is_empty());
    }
    assert!(nonempty > 100, "fixtures too sparse: {nonempty}");
}

#[test]
fn label_partition_matches_flood_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let bits: Vec<f64> = (0..64).map(|_| if rng.random_bool(0.45) { 1.0 } else { 0.0 }).collect();
        let hm = normalize_heatmap(&Grid::new(8, 8, bits).unwrap()).unwrap();
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let labels = label_components(&threshold_mask(&hm, 0.25).unwrap(), conn);
            let mut ours: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); labels.count];
            for (i, &l) in labels.labels.iter().enumerate() {
                if l > 0 {
                    ours[l as usize - 1].insert((i / 8, i % 8));
                }
            }
            let mut theirs = flood_components(&hm, 0.25, eight);
            ours.sort();
            theirs.sort();
            assert_eq!(ours, theirs);
        }
    }
}

#[test]
fn two_plateau_fixture() {
    let mut v = vec![0.0; 256];
    for y in 2..5 {
        for x in 2..5 {
            v[y * 16 + x] = 0.9;
        }
    }
    for y in 9..12 {
        for x in 8..12 {
            v[y * 16 + x] = 0.5;
        }
    }
    v[0] = 1.0;
    let hm = AttentionHeatmap { values: v, ..normalize_heatmap(&Grid::new(16, 16, vec![0.0; 256]).unwrap()).unwrap() };
    let r: Vec<RegionBox<f64>> = extract_regions(&hm, &ExtractionParams::default()).unwrap();
    assert_eq!(r.len(), 2);
    assert_eq!((r[0].area_px, r[0].rank), (9, 1));
    assert_eq!((r[1].area_px, r[1].rank), (12, 2));
    assert!((r[0].score - 0.9).abs() < 1e-12 && (r[1].score - 0.5).abs() < 1e-12);
}

#[test]
fn seven_blobs_keep_top_five() {
    let mut v = vec![0.0; 40 * 40];
    let levels = [0.3, 0.95, 0.6, 0.45, 1.0, 0.8, 0.7];
    for (i, l) in levels.iter().enumerate() {
        let (y0, x0) = ((i / 3) * 12 + 1, (i % 3) * 12 + 1);
        for y in y0..y0 + 3 {
            for x in x0..x0 + 3 {
                v[y * 40 + x] = *l;
            }
        }
    }
    let hm = normalize_heatmap(&Grid::new(40, 40, v).unwrap()).unwrap();
    let r: Vec<RegionBox<f64>> = extract_regions(&hm, &ExtractionParams::default()).unwrap();
    assert_eq!(r.len(), 5);
    for (b, want) in r.iter().zip([1.0f64, 0.95, 0.8, 0.7, 0.6]) {
        assert!((b.score - want).abs() < 1e-12, "{} vs {want}", b.score);
    }
    assert_eq!(oracle(&hm, &ExtractionParams::default()).len(), 5);
}

fn grid_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=20, 1usize..=20).prop_flat_map(|(h, w)| {
        (Just(h), Just(w), proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, Just(1.0)], h * w))
    })
}

proptest! {
    #[test]
    fn result_invariants((h, w, v) in grid_strategy(), eight in any::<bool>()) {
        let hm = normalize_heatmap(&Grid::new(h, w, v).unwrap()).unwrap();
        let p = ExtractionParams {
            connectivity: if eight { Connectivity::Eight } else { Connectivity::Four },
            ..ExtractionParams::default()
        };
        let r = extract_regions(&hm, &p).unwrap();
        prop_assert!(r.len() <= p.max_regions);
        for (i, b) in r.iter().enumerate() {
            prop_assert_eq!(b.rank, i + 1);
            prop_assert!(b.area_px >= p.min_area);
            prop_assert!(b.score > 0.0 && b.score <= 1.0);
            prop_assert!(b.width >= 1 && b.height >= 1);
            prop_assert!(b.x + b.width <= w && b.y + b.height <= h);
        }
        for pair in r.windows(2) {
            prop_assert!(pair[0].score >= pair[1].score);
        }
        prop_assert_eq!(extract_regions(&hm, &p).unwrap(), r);
    }

    #[test]
    fn scale_invariance((h, w, v) in grid_strategy(), k in -6i32..=6) {
        // powers of two keep the rescaled grid exact
        let s = 2f64.powi(k);
        let a = normalize_heatmap(&Grid::new(h, w, v.clone()).unwrap()).unwrap();
        let b = normalize_heatmap(&Grid::new(h, w, v.iter().map(|x| x * s).collect()).unwrap()).unwrap();
        let p = ExtractionParams::default();
        prop_assert_eq!(extract_regions(&a, &p).unwrap(), extract_regions(&b, &p).unwrap());
    }
}
