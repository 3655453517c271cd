//! 8-bit RGB frames and their PNG representation.

use std::fmt;
use std::path::Path;

use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// A row-major, interleaved RGB image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB frame needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self> {
        Self::from_fn(width, height, |_, _| color)
    }

    /// Builds a frame by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// `(width, height)`
    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn is_black(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0)
    }

    /// Copies the `width`×`height` block whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, width: u32, height: u32) -> Result<Frame> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{} frame",
                self.width, self.height
            )));
        }
        let row = width as usize * 3;
        let mut pixels = Vec::with_capacity(row * height as usize);
        for y in y0..y0 + height {
            let start = self.offset(x0, y);
            pixels.extend_from_slice(&self.pixels[start..start + row]);
        }
        Frame::new(width, height, pixels)
    }

    /// Writes `src` into this frame with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &Frame, x0: u32, y0: u32) -> Result<()> {
        if x0 + src.width > self.width || y0 + src.height > self.height {
            return Err(Error::invalid(format!(
                "{}x{} block at +{x0}+{y0} exceeds {}x{} frame",
                src.width, src.height, self.width, self.height
            )));
        }
        let row = src.width as usize * 3;
        for y in 0..src.height {
            let dst = self.offset(x0, y0 + y);
            let s = src.offset(0, y);
            self.pixels[dst..dst + row].copy_from_slice(&src.pixels[s..s + row]);
        }
        Ok(())
    }

    /// Bilinear resampling to `width`×`height`. Returns a clone when the size already matches.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<Frame> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "resize target must be positive, got {width}x{height}"
            )));
        }
        if (width, height) == self.dimensions() {
            return Ok(self.clone());
        }
        let resized = image::imageops::resize(&self.to_rgb_image(), width, height, FilterType::Triangle);
        Ok(Frame::from(resized))
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("frame buffer length is validated on construction")
    }

    /// Decodes any supported image file, converting to 8-bit RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Frame> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Frame::from(img.into_rgb8()))
    }

    /// Writes a lossless 8-bit RGB PNG. Any other extension is refused.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            return Err(Error::invalid(format!(
                "{}: only lossless PNG output is supported",
                path.display()
            )));
        }
        self.to_rgb_image()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

impl From<RgbImage> for Frame {
    fn from(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Frame {
            width,
            height,
            pixels: img.into_raw(),
        }
    }
}
