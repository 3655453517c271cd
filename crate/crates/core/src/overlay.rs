//! Trajectory overlays: an end-effector path drawn over the first frame with a
//! color ramp encoding temporal progression.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frame::{Frame, Rgb};
use crate::grid::{apply_mask, assemble_grid, GridImage, GridLayout, GridMask};

pub const BLUE: Rgb = [0, 0, 255];
pub const RED: Rgb = [255, 0, 0];
pub const DEFAULT_STROKE_WIDTH: u32 = 3;

/// Ordered 2D pixel positions `(x, y)`; at least two points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    points: Vec<(u32, u32)>,
}

impl Trajectory {
    pub fn new(points: Vec<(u32, u32)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs at least 2 points, got {}",
                points.len()
            )));
        }
        Ok(Self { points })
    }

    /// Validates signed `[x, y]` pairs against a `(width, height)` frame. The error lists
    /// every offending point.
    pub fn from_points(points: &[[i64; 2]], (width, height): (u32, u32)) -> Result<Self> {
        let outside: Vec<String> = points
            .iter()
            .enumerate()
            .filter(|(_, &[x, y])| x < 0 || y < 0 || x >= width as i64 || y >= height as i64)
            .map(|(i, [x, y])| format!("#{i} ({x}, {y})"))
            .collect();
        if !outside.is_empty() {
            return Err(Error::invalid(format!(
                "trajectory points outside {width}x{height} frame: {}",
                outside.join(", ")
            )));
        }
        Self::new(points.iter().map(|&[x, y]| (x as u32, y as u32)).collect())
    }

    pub fn points(&self) -> &[(u32, u32)] {
        &self.points
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Maps pixel centres from a `from` sized frame into a `to` sized frame.
    pub fn rescale(&self, from: (u32, u32), to: (u32, u32)) -> Result<Self> {
        if from == to {
            return Ok(self.clone());
        }
        if from.0 == 0 || from.1 == 0 || to.0 == 0 || to.1 == 0 {
            return Err(Error::invalid("cannot rescale a trajectory to or from an empty frame"));
        }
        let map = |v: u32, src: u32, dst: u32| -> u32 {
            let scaled = ((v as f64 + 0.5) * dst as f64 / src as f64).floor() as u32;
            scaled.min(dst - 1)
        };
        Self::new(
            self.points
                .iter()
                .map(|&(x, y)| (map(x, from.0, to.0), map(y, from.1, to.1)))
                .collect(),
        )
    }

    fn check_bounds(&self, frame: &Frame) -> Result<()> {
        let signed: Vec<[i64; 2]> = self.points.iter().map(|&(x, y)| [x as i64, y as i64]).collect();
        Self::from_points(&signed, frame.dimensions()).map(|_| ())
    }
}

/// 24-bit color written as `#rrggbb` (the `#` is optional when parsing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HexColor(pub Rgb);

impl FromStr for HexColor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let hex = s.strip_prefix('#').unwrap_or(s);
        if hex.len() != 6 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::invalid(format!("{s:?} is not a #rrggbb color")));
        }
        let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex");
        Ok(HexColor([channel(0), channel(2), channel(4)]))
    }
}

impl fmt::Display for HexColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "#{r:02x}{g:02x}{b:02x}")
    }
}

impl Serialize for HexColor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HexColor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorRamp {
    pub start_color: HexColor,
    pub end_color: HexColor,
    pub stroke_width: u32,
}

impl Default for ColorRamp {
    /// Blue for the earliest segment, red for the latest.
    fn default() -> Self {
        Self {
            start_color: HexColor(BLUE),
            end_color: HexColor(RED),
            stroke_width: DEFAULT_STROKE_WIDTH,
        }
    }
}

impl ColorRamp {
    pub fn validate(&self) -> Result<()> {
        if self.stroke_width == 0 {
            return Err(Error::invalid("stroke width must be at least 1"));
        }
        Ok(())
    }
}

/// Color of segment `segment` out of `segments`, interpolated linearly per channel.
pub fn ramp_color(segment: usize, segments: usize, ramp: &ColorRamp) -> Result<Rgb> {
    if segment >= segments {
        return Err(Error::invalid(format!("segment {segment} outside 0..{segments}")));
    }
    let (start, end) = (ramp.start_color.0, ramp.end_color.0);
    if segments == 1 {
        return Ok(start);
    }
    let t = segment as f64 / (segments - 1) as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = start[c] as f64 + t * (end[c] as f64 - start[c] as f64);
        out[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Integer Bresenham line from `a` to `b`, both endpoints included.
pub fn bresenham(a: (u32, u32), b: (u32, u32)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

fn stamp(frame: &mut Frame, (cx, cy): (i64, i64), width: u32, color: Rgb) {
    let lo = -((width as i64 - 1) / 2);
    let hi = width as i64 / 2;
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    for y in (cy + lo).max(0)..=(cy + hi).min(h - 1) {
        for x in (cx + lo).max(0)..=(cx + hi).min(w - 1) {
            frame.set(x as u32, y as u32, color);
        }
    }
}

/// Draws every segment of `traj` onto a copy of `frame` with a square brush of
/// `ramp.stroke_width`. Later segments are painted over earlier ones; pixels are replaced,
/// not blended.
pub fn render_overlay(frame: &Frame, traj: &Trajectory, ramp: &ColorRamp) -> Result<Frame> {
    ramp.validate()?;
    traj.check_bounds(frame)?;
    let mut out = frame.clone();
    let segments = traj.segment_count();
    for (s, pair) in traj.points.windows(2).enumerate() {
        let color = ramp_color(s, segments, ramp)?;
        for p in bresenham(pair[0], pair[1]) {
            stamp(&mut out, p, ramp.stroke_width, color);
        }
    }
    Ok(out)
}

/// Masked conditioning grid for the trajectory branch: the overlaid first frame in the
/// top-left cell and black everywhere else.
pub fn build_trajectory_grid_input(frames: &[Frame], traj: Option<&Trajectory>, ramp: &ColorRamp) -> Result<GridImage> {
    let traj = traj.ok_or_else(|| Error::MissingCondition("episode has no trajectory".into()))?;
    let first = frames.first().ok_or_else(|| Error::invalid("no frames supplied"))?;
    let mut frames = frames.to_vec();
    frames[0] = render_overlay(first, traj, ramp)?;
    let grid = assemble_grid(&frames, &GridLayout::serpentine())?;
    Ok(apply_mask(&grid, &GridMask::first_frame()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blue_to_red() -> ColorRamp {
        ColorRamp::default()
    }

    #[test]
    fn ramp_examples() {
        let r = blue_to_red();
        assert_eq!(ramp_color(0, 5, &r).unwrap(), [0, 0, 255]);
        assert_eq!(ramp_color(4, 5, &r).unwrap(), [255, 0, 0]);
        assert_eq!(ramp_color(2, 5, &r).unwrap(), [128, 0, 128]);
        assert_eq!(ramp_color(0, 1, &r).unwrap(), [0, 0, 255]);
        assert!(ramp_color(5, 5, &r).is_err());
    }

    #[test]
    fn ramp_is_monotone_per_channel() {
        let r = ColorRamp {
            start_color: HexColor([10, 200, 99]),
            end_color: HexColor([250, 3, 99]),
            stroke_width: 1,
        };
        let colors: Vec<Rgb> = (0..17).map(|s| ramp_color(s, 17, &r).unwrap()).collect();
        for w in colors.windows(2) {
            assert!(w[0][0] <= w[1][0]);
            assert!(w[0][1] >= w[1][1]);
            assert_eq!(w[1][2], 99);
        }
    }

    #[test]
    fn hex_colors() {
        assert_eq!("#0000ff".parse::<HexColor>().unwrap().0, BLUE);
        assert_eq!("FF0000".parse::<HexColor>().unwrap().0, RED);
        assert!("#12345".parse::<HexColor>().is_err());
        assert!("#gg0000".parse::<HexColor>().is_err());
        assert_eq!(HexColor([1, 171, 255]).to_string(), "#01abff");
    }

    /// Reference line rasterizer: for a shallow line, one pixel per column at the rounded
    /// ideal y (ties toward the start row); matches Bresenham for horizontal and diagonal input.
    fn reference_line(a: (u32, u32), b: (u32, u32)) -> Vec<(i64, i64)> {
        let (x0, y0, x1, y1) = (a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64);
        let n = (x1 - x0).abs().max((y1 - y0).abs()) as i64;
        (0..=n)
            .map(|i| {
                let t = if n == 0 { 0.0 } else { i as f64 / n as f64 };
                ((x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64)
            })
            .collect()
    }

    #[test]
    fn bresenham_matches_reference_on_axis_and_diagonal_lines() {
        for (a, b) in [
            ((1, 4), (9, 4)),
            ((9, 4), (1, 4)),
            ((2, 2), (7, 7)),
            ((3, 0), (3, 6)),
            ((7, 1), (2, 6)),
        ] {
            assert_eq!(bresenham(a, b), reference_line(a, b), "{a:?} -> {b:?}");
        }
        assert_eq!(bresenham((3, 3), (3, 3)), vec![(3, 3)]);
    }

    #[test]
    fn width_one_horizontal_changes_exactly_the_line() {
        let frame = Frame::filled(12, 8, [40, 40, 40]).unwrap();
        let traj = Trajectory::new(vec![(2, 5), (9, 5)]).unwrap();
        let ramp = ColorRamp {
            stroke_width: 1,
            ..blue_to_red()
        };
        let out = render_overlay(&frame, &traj, &ramp).unwrap();
        let line: Vec<(i64, i64)> = reference_line((2, 5), (9, 5));
        for y in 0..8 {
            for x in 0..12 {
                let on_line = line.contains(&(x as i64, y as i64));
                if on_line {
                    assert_eq!(out.get(x, y), BLUE);
                } else {
                    assert_eq!(out.get(x, y), frame.get(x, y));
                }
            }
        }
    }

    #[test]
    fn degenerate_segment_draws_a_dot() {
        let frame = Frame::filled(9, 9, [0; 3]).unwrap();
        let traj = Trajectory::new(vec![(4, 4), (4, 4)]).unwrap();
        let out = render_overlay(&frame, &traj, &blue_to_red()).unwrap();
        let changed: Vec<(u32, u32)> = (0..9)
            .flat_map(|y| (0..9).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y) != [0, 0, 0])
            .collect();
        assert_eq!(changed.len(), 9);
        assert!(changed.iter().all(|&(x, y)| x.abs_diff(4) <= 1 && y.abs_diff(4) <= 1));
    }

    #[test]
    fn input_is_untouched_and_bounds_are_checked() {
        let frame = Frame::filled(6, 6, [1, 2, 3]).unwrap();
        let before = frame.clone();
        let traj = Trajectory::new(vec![(0, 0), (5, 5)]).unwrap();
        let _ = render_overlay(&frame, &traj, &blue_to_red()).unwrap();
        assert_eq!(frame, before);
        let outside = Trajectory::new(vec![(0, 0), (6, 1)]).unwrap();
        let err = render_overlay(&frame, &outside, &blue_to_red()).unwrap_err();
        assert!(err.to_string().contains("(6, 1)"));
        assert!(Trajectory::from_points(&[[1, 1]], (4, 4)).is_err());
    }

    #[test]
    fn same_start_and_end_color_is_uniform() {
        let frame = Frame::filled(16, 16, [0; 3]).unwrap();
        let green = HexColor([0, 255, 0]);
        let ramp = ColorRamp {
            start_color: green,
            end_color: green,
            stroke_width: 2,
        };
        let traj = Trajectory::new(vec![(1, 1), (14, 3), (8, 12), (2, 14)]).unwrap();
        let out = render_overlay(&frame, &traj, &ramp).unwrap();
        assert!(out.pixels().chunks(3).all(|p| p == [0, 0, 0] || p == [0, 255, 0]));
    }

    #[test]
    fn trajectory_grid_has_single_overlaid_tile() {
        let frames: Vec<Frame> = (0..9u8)
            .map(|t| Frame::filled(10, 10, [t * 20 + 10; 3]).unwrap())
            .collect();
        let traj = Trajectory::new(vec![(1, 1), (8, 8)]).unwrap();
        let grid = build_trajectory_grid_input(&frames, Some(&traj), &blue_to_red()).unwrap();
        assert_eq!(grid.nonzero_cells(), vec![(0, 0)]);
        assert_eq!(
            grid.tile((0, 0)),
            render_overlay(&frames[0], &traj, &blue_to_red()).unwrap()
        );
        assert!(matches!(
            build_trajectory_grid_input(&frames, None, &blue_to_red()),
            Err(Error::MissingCondition(_))
        ));
    }

    #[test]
    fn rescale_maps_pixel_centres() {
        let t = Trajectory::new(vec![(0, 0), (99, 49)]).unwrap();
        let r = t.rescale((100, 50), (10, 5)).unwrap();
        assert_eq!(r.points(), &[(0, 0), (9, 4)]);
        let up = t.rescale((100, 50), (200, 100)).unwrap();
        assert_eq!(up.points(), &[(1, 1), (199, 99)]);
    }
}
