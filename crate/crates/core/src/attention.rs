//! Grad-CAM combination arithmetic.
//!
//! The model server runs the forward/backward pass and exports the target
//! layer's activations and gradients already reshaped to `K×H×W`. This module
//! turns them into a normalized heatmap:
//!
//! 1. channel weights are the global average of each gradient channel,
//! 2. the class activation map is the ReLU of the weighted channel sum,
//! 3. the map is resized to image resolution and divided by its maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `K×H×W` tensor, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack<T> {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> ChannelStack<T> {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "tensor shape {channels}x{height}x{width} has a zero dimension"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "tensor shape {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// Builds a stack from nested `[channel][row][col]` vectors.
    pub fn from_nested(nested: &[Vec<Vec<T>>]) -> Result<Self> {
        let channels = nested.len();
        let height = nested.first().map_or(0, Vec::len);
        let width = nested
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len);
        let mut values = Vec::with_capacity(channels * height * width);
        for (k, chan) in nested.iter().enumerate() {
            if chan.len() != height {
                return Err(Error::invalid(format!("channel {k} has ragged rows")));
            }
            for (i, row) in chan.iter().enumerate() {
                if row.len() != width {
                    return Err(Error::invalid(format!("channel {k} row {i} is ragged")));
                }
                values.extend_from_slice(row);
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn channel(&self, k: usize) -> &[T] {
        let plane = self.height * self.width;
        &self.values[k * plane..(k + 1) * plane]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<T>>> {
        (0..self.channels)
            .map(|k| {
                self.channel(k)
                    .chunks(self.width)
                    .map(<[T]>::to_vec)
                    .collect()
            })
            .collect()
    }
}

/// Activations of the target layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack<T>(pub ChannelStack<T>);

/// Gradients of the answer score with respect to the target layer activations.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack<T>(pub ChannelStack<T>);

impl<T> std::ops::Deref for FeatureStack<T> {
    type Target = ChannelStack<T>;
    fn deref(&self) -> &ChannelStack<T> {
        &self.0
    }
}

impl<T> std::ops::Deref for GradientStack<T> {
    type Target = ChannelStack<T>;
    fn deref(&self) -> &ChannelStack<T> {
        &self.0
    }
}

/// A plain `H×W` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("grid has a zero dimension"));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged grid rows"));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn max_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }
}

/// Where a heatmap came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSource {
    /// Computed here from exported features and gradients.
    EnhancedGradcam,
    /// Pre-reduced heatmap supplied by the server.
    BasicGradcam,
    None,
}

/// Saliency grid over the image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHeatmap<T> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
    pub normalized: bool,
    pub source: HeatmapSource,
    pub target_layer: String,
}

impl<T: Scalar> AttentionHeatmap<T> {
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn max_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::zero(), T::max)
    }

    pub fn as_grid(&self) -> Grid<T> {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.clone(),
        }
    }

    pub fn with_source(mut self, source: HeatmapSource) -> Self {
        self.source = source;
        self
    }

    pub fn with_target_layer(mut self, layer: impl Into<String>) -> Self {
        self.target_layer = layer.into();
        self
    }

    /// Checks the normalized-heatmap invariants.
    pub fn validate_normalized(&self) -> Result<()> {
        if !self.normalized {
            return Err(Error::invalid("heatmap is not normalized"));
        }
        if self.values.len() != self.height * self.width {
            return Err(Error::invalid("heatmap value count does not match its shape"));
        }
        if self
            .values
            .iter()
            .any(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
        {
            return Err(Error::invalid("normalized heatmap has values outside [0,1]"));
        }
        Ok(())
    }
}

/// Global average pooling of each gradient channel.
pub fn compute_channel_weights<T: Scalar>(gradients: &GradientStack<T>) -> Result<Vec<T>> {
    let (k, h, w) = gradients.shape();
    if k == 0 || h == 0 || w == 0 {
        return Err(Error::invalid("gradient stack has a zero dimension"));
    }
    let n = T::from_count(h * w);
    Ok((0..k)
        .map(|c| {
            gradients
                .channel(c)
                .iter()
                .fold(T::zero(), |acc, &g| acc + g)
                / n
        })
        .collect())
}

/// ReLU of the weighted channel sum.
pub fn compute_cam<T: Scalar>(features: &FeatureStack<T>, weights: &[T]) -> Result<Grid<T>> {
    if weights.len() != features.channels() {
        return Err(Error::invalid(format!(
            "{} weights for {} feature channels",
            weights.len(),
            features.channels()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("non-finite channel weight"));
    }
    let plane = features.height() * features.width();
    let mut acc = vec![T::zero(); plane];
    for (k, &wk) in weights.iter().enumerate() {
        for (a, &f) in acc.iter_mut().zip(features.channel(k)) {
            *a = *a + wk * f;
        }
    }
    for a in &mut acc {
        *a = a.max(T::zero());
    }
    Grid::new(features.height(), features.width(), acc)
}

/// Divides a non-negative grid by its maximum. An all-zero grid stays zero.
pub fn normalize_heatmap<T: Scalar>(raw: &Grid<T>) -> Result<AttentionHeatmap<T>> {
    if raw.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("heatmap contains non-finite values"));
    }
    if raw.values.iter().any(|v| *v < T::zero()) {
        return Err(Error::invalid("heatmap contains negative values"));
    }
    let max = raw.values.iter().copied().fold(T::zero(), T::max);
    let values = if max > T::zero() {
        raw.values.iter().map(|&v| (v / max).min(T::one())).collect()
    } else {
        vec![T::zero(); raw.values.len()]
    };
    Ok(AttentionHeatmap {
        height: raw.height,
        width: raw.width,
        values,
        normalized: true,
        source: HeatmapSource::None,
        target_layer: String::new(),
    })
}

/// Bilinear resize with half-pixel centers (edge samples clamp to the border).
pub fn resize_bilinear<T: Scalar>(grid: &Grid<T>, height: usize, width: usize) -> Result<Grid<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target has a zero dimension"));
    }
    if grid.height == height && grid.width == width {
        return Ok(grid.clone());
    }
    let ys = axis_samples::<T>(grid.height, height);
    let xs = axis_samples::<T>(grid.width, width);
    let mut values = Vec::with_capacity(height * width);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = grid.get(y0, x0) * (T::one() - fx) + grid.get(y0, x1) * fx;
            let bottom = grid.get(y1, x0) * (T::one() - fx) + grid.get(y1, x1) * fx;
            values.push(top * (T::one() - fy) + bottom * fy);
        }
    }
    Grid::new(height, width, values)
}

fn axis_samples<T: Scalar>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let scale = T::from_count(src) / T::from_count(dst);
    let half = T::lit(0.5);
    (0..dst)
        .map(|i| {
            let pos = ((T::from_count(i) + half) * scale - half).max(T::zero());
            let i0 = pos.floor().to_usize().unwrap_or(0).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i1 == i0 { T::zero() } else { pos - T::from_count(i0) };
            (i0, i1, frac)
        })
        .collect()
}

/// Resizes a heatmap onto the target grid and clamps the result to `[0,1]`.
pub fn upsample_heatmap<T: Scalar>(
    hm: &AttentionHeatmap<T>,
    target_height: usize,
    target_width: usize,
) -> Result<AttentionHeatmap<T>> {
    let resized = resize_bilinear(&hm.as_grid(), target_height, target_width)?;
    Ok(AttentionHeatmap {
        height: target_height,
        width: target_width,
        values: resized
            .values
            .into_iter()
            .map(|v| v.max(T::zero()).min(T::one()))
            .collect(),
        normalized: hm.normalized,
        source: hm.source,
        target_layer: hm.target_layer.clone(),
    })
}

/// Full Grad-CAM: weights, CAM, resize to the target resolution, normalize.
pub fn gradcam<T: Scalar>(
    features: &FeatureStack<T>,
    gradients: &GradientStack<T>,
    target_height: usize,
    target_width: usize,
) -> Result<AttentionHeatmap<T>> {
    if features.shape() != gradients.shape() {
        return Err(Error::invalid(format!(
            "feature shape {:?} does not match gradient shape {:?}",
            features.shape(),
            gradients.shape()
        )));
    }
    let weights = compute_channel_weights(gradients)?;
    let cam = compute_cam(features, &weights)?;
    let resized = resize_bilinear(&cam, target_height, target_width)?;
    Ok(normalize_heatmap(&resized)?.with_source(HeatmapSource::EnhancedGradcam))
}

/// Lifts a server-reduced heatmap (values in `[0,1]`) to the target resolution.
pub fn heatmap_from_reduced<T: Scalar>(
    grid: &Grid<T>,
    target_height: usize,
    target_width: usize,
) -> Result<AttentionHeatmap<T>> {
    if grid
        .values
        .iter()
        .any(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
    {
        return Err(Error::invalid("reduced heatmap values must lie in [0,1]"));
    }
    let resized = resize_bilinear(grid, target_height, target_width)?;
    Ok(normalize_heatmap(&resized)?.with_source(HeatmapSource::BasicGradcam))
}
