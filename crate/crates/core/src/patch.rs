//! The atomic image unit shared by every pipeline stage.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optical magnification of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "5x")]
    X5,
    #[serde(rename = "10x")]
    X10,
    #[serde(rename = "20x")]
    X20,
    #[serde(rename = "40x")]
    X40,
}

impl Magnification {
    pub const ALL: [Magnification; 4] = [Self::X5, Self::X10, Self::X20, Self::X40];
    /// Levels used by the patch-level linear probe.
    pub const PROBE_LEVELS: [Magnification; 3] = [Self::X5, Self::X10, Self::X20];

    /// Nominal resolution in micrometres per pixel.
    pub fn microns_per_pixel(self) -> f64 {
        match self {
            Self::X5 => 2.0,
            Self::X10 => 1.0,
            Self::X20 => 0.5,
            Self::X40 => 0.25,
        }
    }

    /// Zoom factor relative to 10x.
    pub fn relative_to_10x(self) -> f64 {
        1.0 / self.microns_per_pixel()
    }

    pub fn code(self) -> u8 {
        match self {
            Self::X5 => 0,
            Self::X10 => 1,
            Self::X20 => 2,
            Self::X40 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::X5 => "5x",
            Self::X10 => "10x",
            Self::X20 => "20x",
            Self::X40 => "40x",
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Magnification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "5x" => Ok(Self::X5),
            "10x" => Ok(Self::X10),
            "20x" => Ok(Self::X20),
            "40x" => Ok(Self::X40),
            other => Err(Error::invalid(format!("unknown magnification '{other}'"))),
        }
    }
}

/// An RGB tile with provenance. Pixels are stored row-major, interleaved
/// RGB, as sRGB-encoded values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pub slide_id: String,
    pub case_id: String,
    pub magnification: Magnification,
    pub origin: (i64, i64),
}

impl Patch {
    /// Builds a patch from interleaved RGB data. Values are clamped to `[0, 1]`.
    pub fn from_rgb(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("patch dimensions must be at least 1x1"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: width * height * 3,
                actual: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("patch contains non-finite values"));
        }
        clamp_unit(&mut pixels);
        Ok(Self {
            width,
            height,
            pixels,
            slide_id: String::new(),
            case_id: String::new(),
            magnification: Magnification::X20,
            origin: (0, 0),
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self::from_rgb(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Pixels as a list of RGB triples.
    pub fn to_triples(&self) -> Vec<[f64; 3]> {
        self.pixels
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    /// A patch with the same provenance and shape but new pixel values
    /// (clamped to `[0, 1]`).
    pub fn with_pixels(&self, mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), self.pixels.len(), "pixel buffer size changed");
        clamp_unit(&mut pixels);
        Self {
            pixels,
            ..self.clone_meta(self.width, self.height)
        }
    }

    pub fn with_triples(&self, triples: &[[f64; 3]]) -> Self {
        self.with_pixels(triples.iter().flatten().copied().collect())
    }

    /// A new patch of a different size that keeps this patch's provenance.
    pub fn resized_like(&self, width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height * 3);
        clamp_unit(&mut pixels);
        Self {
            pixels,
            ..self.clone_meta(width, height)
        }
    }

    fn clone_meta(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: Vec::new(),
            slide_id: self.slide_id.clone(),
            case_id: self.case_id.clone(),
            magnification: self.magnification,
            origin: self.origin,
        }
    }

    pub fn with_provenance(
        mut self,
        slide_id: impl Into<String>,
        case_id: impl Into<String>,
        magnification: Magnification,
    ) -> Self {
        self.slide_id = slide_id.into();
        self.case_id = case_id.into();
        self.magnification = magnification;
        self
    }

    /// Extracts one channel as a dense row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn from_channels(&self, planes: [&[f64]; 3]) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for i in 0..self.n_pixels() {
            pixels.extend([planes[0][i], planes[1][i], planes[2][i]]);
        }
        self.with_pixels(pixels)
    }

    /// Quantizes to 8-bit sRGB bytes (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_rgb(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::format(path, e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    /// Largest absolute per-value difference between two equally shaped patches.
    pub fn max_abs_diff(&self, other: &Patch) -> f64 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

fn clamp_unit(values: &mut [f64]) {
    for v in values {
        *v = v.clamp(0.0, 1.0);
    }
}
