//! Python bindings for gridplan.
//!
//! Frames cross the boundary as `Frame` objects (row-major interleaved RGB bytes);
//! matrices and feature sets as nested lists of floats.
//!
//! ```python
//! import gridplan_py as gp
//! frames = [gp.Frame.filled(32, 32, (10 * t, 0, 0)) for t in range(1, 10)]
//! grid = gp.assemble_grid(frames)
//! masked = gp.apply_mask(grid, [(0, 0)])
//! ```

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use gridplan::config::RunConfig;
use gridplan::episode;
use gridplan::grid::{self, GridLayout, GridMask};
use gridplan::lora::{self, DenseLayer, LoraAdapter};
use gridplan::metrics::{self, FeatureSet, SsimConfig};
use gridplan::overlay::{self, ColorRamp, HexColor, Trajectory};
use gridplan::pipeline;
use gridplan::supervision::{self, IdentityEncoder};

fn to_py(err: gridplan::Error) -> PyErr {
    use gridplan::Error as E;
    match err {
        E::Io { .. } | E::Image { .. } => PyIOError::new_err(err.to_string()),
        E::Numerical(_) | E::Encoder { .. } => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for gridplan::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// 8-bit RGB image.
#[pyclass(name = "Frame", module = "gridplan_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyFrame {
    inner: gridplan::Frame,
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(width: u32, height: u32, pixels: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: gridplan::Frame::new(width, height, pixels).py()?,
        })
    }

    #[staticmethod]
    fn filled(width: u32, height: u32, rgb: (u8, u8, u8)) -> PyResult<Self> {
        Ok(Self {
            inner: gridplan::Frame::filled(width, height, [rgb.0, rgb.1, rgb.2]).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: gridplan::Frame::load(path).py()?,
        })
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(path).py()
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.pixels())
    }

    fn get(&self, x: u32, y: u32) -> PyResult<(u8, u8, u8)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) outside frame")));
        }
        let [r, g, b] = self.inner.get(x, y);
        Ok((r, g, b))
    }

    fn resize(&self, width: u32, height: u32) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.resize_bilinear(width, height).py()?,
        })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Frame({}x{})", self.inner.width(), self.inner.height())
    }
}

/// 3×3 grid of equally sized tiles.
#[pyclass(name = "GridImage", module = "gridplan_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyGridImage {
    inner: grid::GridImage,
}

#[pymethods]
impl PyGridImage {
    #[staticmethod]
    fn from_frame(frame: &PyFrame) -> PyResult<Self> {
        Ok(Self {
            inner: grid::GridImage::from_frame(frame.inner.clone()).py()?,
        })
    }

    #[getter]
    fn tile_width(&self) -> u32 {
        self.inner.tile_width()
    }

    #[getter]
    fn tile_height(&self) -> u32 {
        self.inner.tile_height()
    }

    fn image(&self) -> PyFrame {
        PyFrame {
            inner: self.inner.image().clone(),
        }
    }

    fn tile(&self, row: usize, col: usize) -> PyResult<PyFrame> {
        if row >= 3 || col >= 3 {
            return Err(PyValueError::new_err(format!("cell ({row}, {col}) outside grid")));
        }
        Ok(PyFrame {
            inner: self.inner.tile((row, col)),
        })
    }

    fn nonzero_cells(&self) -> Vec<(usize, usize)> {
        self.inner.nonzero_cells()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn serpentine_cell(t: usize) -> PyResult<(usize, usize)> {
    grid::serpentine_cell(t).py()
}

#[pyfunction]
fn assemble_grid(frames: Vec<PyFrame>) -> PyResult<PyGridImage> {
    let frames: Vec<_> = frames.into_iter().map(|f| f.inner).collect();
    Ok(PyGridImage {
        inner: grid::assemble_grid(&frames, &GridLayout::serpentine()).py()?,
    })
}

#[pyfunction]
fn disassemble_grid(grid: &PyGridImage) -> Vec<PyFrame> {
    grid::disassemble_grid(&grid.inner, &GridLayout::serpentine())
        .into_iter()
        .map(|inner| PyFrame { inner })
        .collect()
}

/// Zeroes every tile not listed in `visible` (default: top-left only).
#[pyfunction]
#[pyo3(signature = (grid, visible=None))]
fn apply_mask(grid: &PyGridImage, visible: Option<Vec<(usize, usize)>>) -> PyResult<PyGridImage> {
    let mask = match visible {
        Some(cells) => GridMask::new(cells).py()?,
        None => GridMask::first_frame(),
    };
    Ok(PyGridImage {
        inner: grid::apply_mask(&grid.inner, &mask),
    })
}

#[pyfunction]
#[pyo3(signature = (length, count=9))]
fn sample_uniform(length: usize, count: usize) -> PyResult<Vec<usize>> {
    episode::sample_uniform(length, count).py()
}

fn ramp(start: &str, end: &str, stroke_width: u32) -> PyResult<ColorRamp> {
    let parse = |s: &str| s.parse::<HexColor>().map_err(to_py);
    Ok(ColorRamp {
        start_color: parse(start)?,
        end_color: parse(end)?,
        stroke_width,
    })
}

#[pyfunction]
#[pyo3(signature = (segment, segments, start="#0000ff", end="#ff0000"))]
fn ramp_color(segment: usize, segments: usize, start: &str, end: &str) -> PyResult<(u8, u8, u8)> {
    let [r, g, b] = overlay::ramp_color(segment, segments, &ramp(start, end, 1)?).py()?;
    Ok((r, g, b))
}

#[pyfunction]
#[pyo3(signature = (frame, points, start="#0000ff", end="#ff0000", stroke_width=3))]
fn render_overlay(
    frame: &PyFrame,
    points: Vec<(i64, i64)>,
    start: &str,
    end: &str,
    stroke_width: u32,
) -> PyResult<PyFrame> {
    let signed: Vec<[i64; 2]> = points.into_iter().map(|(x, y)| [x, y]).collect();
    let traj = Trajectory::from_points(&signed, frame.inner.dimensions()).py()?;
    Ok(PyFrame {
        inner: overlay::render_overlay(&frame.inner, &traj, &ramp(start, end, stroke_width)?).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (instruction, template=supervision::DEFAULT_PROMPT_TEMPLATE))]
fn build_prompt(instruction: &str, template: &str) -> PyResult<String> {
    supervision::build_prompt(instruction, template).py()
}

/// Reconstruction loss under the identity encoder (channels scaled to [0, 1]).
#[pyfunction]
fn latent_loss(pred: &PyGridImage, target: &PyGridImage) -> PyResult<f64> {
    supervision::latent_loss(&pred.inner, &target.inner, &IdentityEncoder).py()
}

#[pyfunction]
fn mse(x: &PyFrame, y: &PyFrame) -> PyResult<f64> {
    metrics::mse(&x.inner, &y.inner).py()
}

#[pyfunction]
#[pyo3(signature = (x, y, window=8, k1=0.01, k2=0.03))]
fn ssim(x: &PyFrame, y: &PyFrame, window: usize, k1: f64, k2: f64) -> PyResult<f64> {
    let cfg = SsimConfig {
        window,
        k1,
        k2,
        ..SsimConfig::default()
    };
    metrics::ssim_frames(&x.inner, &y.inner, &cfg).py()
}

#[pyfunction]
fn success_rate(outcomes: Vec<bool>) -> PyResult<f64> {
    metrics::success_rate(&outcomes).py()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have differing lengths"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Fréchet distance between Gaussians fitted to two feature sets (one row per clip).
#[pyfunction]
fn frechet_distance(real: Vec<Vec<f64>>, generated: Vec<Vec<f64>>) -> PyResult<f64> {
    let real = metrics::fit_gaussian(&FeatureSet::new(matrix(&real)?, "real").py()?);
    let gen = metrics::fit_gaussian(&FeatureSet::new(matrix(&generated)?, "generated").py()?);
    metrics::frechet_distance(&real, &gen).py()
}

#[pyfunction]
fn read_feature_file(path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&metrics::read_feature_file(path).py()?))
}

#[pyfunction]
fn write_feature_file(path: PathBuf, vectors: Vec<Vec<f64>>) -> PyResult<()> {
    metrics::write_feature_file(path, &matrix(&vectors)?).py()
}

#[pyfunction]
fn param_count(d_out: usize, d_in: usize, rank: usize) -> usize {
    lora::param_count(d_out, d_in, rank)
}

/// `(W + α·A·Bᵀ)·x`, evaluated without forming the update.
#[pyfunction]
fn lora_forward(
    weight: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    alpha: f64,
    x: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let layer = DenseLayer::new(matrix(&weight)?, None).py()?;
    let adapter = LoraAdapter::new(matrix(&a)?, matrix(&b)?, alpha).py()?;
    let y = lora::lora_forward(&layer, &adapter, &DVector::from_vec(x)).py()?;
    Ok(y.iter().copied().collect())
}

#[pyfunction]
fn merge_adapter(weight: Vec<Vec<f64>>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, alpha: f64) -> PyResult<Vec<Vec<f64>>> {
    let layer = DenseLayer::new(matrix(&weight)?, None).py()?;
    let adapter = LoraAdapter::new(matrix(&a)?, matrix(&b)?, alpha).py()?;
    Ok(rows(&lora::merge_adapter(&layer, &adapter).py()?.weight))
}

/// JSON report from the toy-block adapter demo.
#[pyfunction]
#[pyo3(signature = (d_model=64, d_ff=128, rank=4, alpha=1.0, seed=0))]
fn lora_demo(d_model: usize, d_ff: usize, rank: usize, alpha: f64, seed: u64) -> PyResult<String> {
    let report = pipeline::lora_demo(pipeline::LoraDemoParams {
        d_model,
        d_ff,
        rank,
        alpha,
        seed,
    })
    .py()?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Runs synthesis from a JSON config string; returns `(pairs_written, episodes_skipped)`.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=1))]
fn synthesize(py: Python<'_>, config_json: &str, jobs: usize) -> PyResult<(usize, usize)> {
    let config: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("bad config: {e}")))?;
    let summary = py.detach(|| pipeline::synthesize(&config, jobs)).py()?;
    Ok((summary.pairs_written, summary.episodes_skipped))
}

#[pyfunction]
fn split(grid_path: PathBuf, output_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    pipeline::split(&grid_path, &output_dir).py()
}

#[pymodule]
fn gridplan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyGridImage>()?;
    m.add_function(wrap_pyfunction!(serpentine_cell, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_grid, m)?)?;
    m.add_function(wrap_pyfunction!(disassemble_grid, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(ramp_color, m)?)?;
    m.add_function(wrap_pyfunction!(render_overlay, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(latent_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(success_rate, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(read_feature_file, m)?)?;
    m.add_function(wrap_pyfunction!(write_feature_file, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(lora_forward, m)?)?;
    m.add_function(wrap_pyfunction!(merge_adapter, m)?)?;
    m.add_function(wrap_pyfunction!(lora_demo, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_roundtrip() {
        let r = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = matrix(&r).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(2, 0)], 5.0);
        assert_eq!(rows(&m), r);
        assert!(matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
