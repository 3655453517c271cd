//! Structural similarity over a uniform sliding window.
//!
//! Local statistics use population moments (`1/n`) over each `w×w` window at stride 1;
//! the score is the mean of the per-window index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Luma weights applied to RGB before comparison.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the plane values.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Single-channel image of `f64` samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} plane cannot hold {} samples",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// `0.299 R + 0.587 G + 0.114 B` on the 0–255 scale, unrounded.
    pub fn luma(frame: &Frame) -> Self {
        let data = frame
            .pixels()
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
            .collect();
        Self {
            width: frame.width() as usize,
            height: frame.height() as usize,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Sum of every `w×w` window of `values` (a `width×height` grid), via a horizontal then a
/// vertical pass. Output is `(width−w+1)×(height−w+1)`, row-major.
fn window_sums(values: &[f64], width: usize, height: usize, w: usize) -> Vec<f64> {
    let out_w = width - w + 1;
    let out_h = height - w + 1;
    let mut rows = vec![0.0; out_w * height];
    for y in 0..height {
        let line = &values[y * width..(y + 1) * width];
        for x in 0..out_w {
            rows[y * out_w + x] = line[x..x + w].iter().sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            out[y * out_w + x] = (y..y + w).map(|yy| rows[yy * out_w + x]).sum();
        }
    }
    out
}

/// Mean SSIM between two planes of identical size.
pub fn ssim(x: &Plane, y: &Plane, cfg: &SsimConfig) -> Result<f64> {
    if (x.width, x.height) != (y.width, y.height) {
        return Err(Error::invalid(format!(
            "cannot compare {}x{} with {}x{}",
            x.width, x.height, y.width, y.height
        )));
    }
    let w = cfg.window;
    if w == 0 || x.width < w || x.height < w {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the {w}x{w} window",
            x.width, x.height
        )));
    }
    let (width, height) = (x.width, x.height);
    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();

    let sx = window_sums(&x.data, width, height, w);
    let sy = window_sums(&y.data, width, height, w);
    let sxx = window_sums(&xx, width, height, w);
    let syy = window_sums(&yy, width, height, w);
    let sxy = window_sums(&xy, width, height, w);

    let n = (w * w) as f64;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for i in 0..sx.len() {
        let mx = sx[i] / n;
        let my = sy[i] / n;
        let vx = sxx[i] / n - mx * mx;
        let vy = syy[i] / n - my * my;
        let cxy = sxy[i] / n - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    let mean = total / sx.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numerical(format!("SSIM evaluated to {mean}")));
    }
    Ok(mean.clamp(-1.0, 1.0))
}

/// SSIM of two RGB frames compared on luma.
pub fn ssim_frames(x: &Frame, y: &Frame, cfg: &SsimConfig) -> Result<f64> {
    ssim(&Plane::luma(x), &Plane::luma(y), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Plane {
        Plane::new(
            w,
            h,
            (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .map(|(x, y)| f(x, y))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let p = plane(20, 13, |x, y| ((x * 31 + y * 17) % 256) as f64);
        assert_eq!(ssim(&p, &p, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn constant_vs_shifted_constant() {
        // both windows flat: SSIM = (2·0·255 + C1) / (0 + 255² + C1) = C1 / (65025 + C1)
        let cfg = SsimConfig::default();
        let a = plane(8, 8, |_, _| 0.0);
        let b = plane(8, 8, |_, _| 255.0);
        let expected = cfg.c1() / (255.0 * 255.0 + cfg.c1());
        assert!((ssim(&a, &b, &cfg).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let cfg = SsimConfig::default();
        let a = plane(7, 9, |_, _| 1.0);
        assert!(ssim(&a, &a, &cfg).is_err());
        let b = plane(9, 9, |_, _| 1.0);
        let c = plane(9, 10, |_, _| 1.0);
        assert!(ssim(&b, &c, &cfg).is_err());
    }

    #[test]
    fn proportional_range_scaling_is_invariant() {
        let cfg = SsimConfig::default();
        let a = plane(12, 12, |x, y| ((x * 13 + y * 7) % 200) as f64);
        let b = plane(12, 12, |x, y| ((x * 3 + y * 29) % 250) as f64);
        let scaled = SsimConfig {
            dynamic_range: 1.0,
            ..cfg
        };
        let s1 = ssim(&a, &b, &cfg).unwrap();
        let s2 = ssim(&a.map(|v| v / 255.0), &b.map(|v| v / 255.0), &scaled).unwrap();
        assert!((s1 - s2).abs() < 1e-9);
    }
}
