use crate::error::{Error, Result};
use crate::resources::BUILTIN_COLORMAP;

/// Piecewise-linear colormap over `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    stops: Vec<(f64, [u8; 3])>,
}

impl Colormap {
    /// Lines of `position r g b`; `#` starts a comment. Positions must rise
    /// strictly from 0 to 1.
    pub fn parse(text: &str) -> Result<Self> {
        let mut stops = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Config(format!("colormap line {}: {m}", i + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("expected `position r g b`"));
            }
            let pos: f64 = f[0].parse().map_err(|_| bad("bad position"))?;
            let mut rgb = [0u8; 3];
            for (c, s) in rgb.iter_mut().zip(&f[1..]) {
                *c = s.parse().map_err(|_| bad("channel must be 0-255"))?;
            }
            stops.push((pos, rgb));
        }
        if stops.len() < 2 {
            return Err(Error::Config("colormap needs at least two stops".into()));
        }
        if stops[0].0 != 0.0 || stops[stops.len() - 1].0 != 1.0 {
            return Err(Error::Config("colormap must span 0 to 1".into()));
        }
        if stops.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Config("colormap positions must increase".into()));
        }
        Ok(Self { stops })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_COLORMAP).expect("builtin colormap is valid")
    }

    /// Color at `v`, clamped into `[0,1]`; NaN maps to the low end.
    pub fn color(&self, v: f64) -> [u8; 3] {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let i = self
            .stops
            .windows(2)
            .position(|w| v <= w[1].0)
            .unwrap_or(self.stops.len() - 2);
        let ((p0, c0), (p1, c1)) = (self.stops[i], self.stops[i + 1]);
        let t = (v - p0) / (p1 - p0);
        let mut out = [0u8; 3];
        for k in 0..3 {
            let a = c0[k] as f64;
            let b = c1[k] as f64;
            out[k] = (a + (b - a) * t).round() as u8;
        }
        out
    }

    pub fn low(&self) -> [u8; 3] {
        self.stops[0].1
    }

    pub fn high(&self) -> [u8; 3] {
        self.stops[self.stops.len() - 1].1
    }
}

impl Default for Colormap {
    fn default() -> Self {
        Self::builtin()
    }
}
