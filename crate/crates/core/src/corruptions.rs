//! PathBlur: Gaussian blur followed by Poisson sensor noise and a JPEG-style
//! block-DCT quantization round trip.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::Patch;

/// Configuration of the PathBlur corruption chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathBlurConfig {
    /// Blur standard deviation range in pixels.
    pub sigma_range: (f64, f64),
    pub apply_probability: f64,
    pub poisson_enabled: bool,
    /// Expected photon count at full intensity.
    pub photon_scale: f64,
    pub jpeg_enabled: bool,
    pub quality_range: (u8, u8),
}

impl Default for PathBlurConfig {
    fn default() -> Self {
        Self {
            sigma_range: (0.1, 2.0),
            apply_probability: 0.5,
            poisson_enabled: true,
            photon_scale: 255.0,
            jpeg_enabled: true,
            quality_range: (30, 90),
        }
    }
}

impl PathBlurConfig {
    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.sigma_range;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::invalid(format!("bad sigma_range {:?}", self.sigma_range)));
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::invalid("apply_probability must lie in [0, 1]"));
        }
        if !(self.photon_scale > 0.0 && self.photon_scale.is_finite()) {
            return Err(Error::invalid("photon_scale must be positive"));
        }
        let (qlo, qhi) = self.quality_range;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return Err(Error::invalid(format!("bad quality_range {:?}", self.quality_range)));
        }
        Ok(())
    }
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Convolves a strided 1D signal in place with a centred kernel.
fn convolve_line(line: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = line.len();
    let r = (kernel.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, w) in kernel.iter().enumerate() {
            acc += w * line[reflect(i as isize + j as isize - r, n)];
        }
        *o = acc;
    }
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and reflected borders.
/// `sigma = 0` is the identity.
pub fn gaussian_blur(patch: &Patch, sigma: f64) -> Patch {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return patch.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (patch.width(), patch.height());
    let mut planes = [0, 1, 2].map(|c| patch.channel(c));
    let mut line = Vec::new();
    let mut out = Vec::new();
    for plane in planes.iter_mut() {
        for y in 0..h {
            line.clear();
            line.extend_from_slice(&plane[y * w..(y + 1) * w]);
            out.resize(w, 0.0);
            convolve_line(&line, &kernel, &mut out);
            plane[y * w..(y + 1) * w].copy_from_slice(&out);
        }
        for x in 0..w {
            line.clear();
            line.extend((0..h).map(|y| plane[y * w + x]));
            out.resize(h, 0.0);
            convolve_line(&line, &kernel, &mut out);
            for (y, v) in out.iter().enumerate() {
                plane[y * w + x] = *v;
            }
        }
    }
    patch.from_channels([&planes[0], &planes[1], &planes[2]])
}

/// Shot noise: each value `x` becomes `min(Poisson(x * photon_scale) / photon_scale, 1)`.
pub fn poisson_noise(patch: &Patch, photon_scale: f64, rng: &mut impl Rng) -> Patch {
    assert!(photon_scale > 0.0, "photon_scale must be positive");
    let out = patch
        .data()
        .iter()
        .map(|&x| {
            let lambda = x * photon_scale;
            if lambda <= 0.0 {
                0.0
            } else {
                let k: f64 = Poisson::new(lambda).expect("finite positive rate").sample(rng);
                (k / photon_scale).min(1.0)
            }
        })
        .collect();
    patch.with_pixels(out)
}

/// Standard JPEG luminance quantization table (quality 50), row-major by
/// vertical then horizontal frequency.
pub const LUMA_QUANT_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance table scaled to `quality` with the usual libjpeg rule.
pub fn quant_table(quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("JPEG quality {quality} outside [1, 100]")));
    }
    let q = f64::from(quality);
    let scale = if quality < 50 { 5000.0 / q } else { 200.0 - 2.0 * q };
    Ok(LUMA_QUANT_TABLE.map(|b| (f64::from(b) * scale / 100.0).round().clamp(1.0, 255.0)))
}

// basis[x][u] = C(u)/2 * cos((2x+1) u pi / 16); orthonormal 8-point DCT-II.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (x, row) in b.iter_mut().enumerate() {
            for (u, v) in row.iter_mut().enumerate() {
                let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                *v = 0.5 * cu * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

/// 2D DCT-II of an 8x8 block stored row-major (`block[y * 8 + x]`).
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    // rows: horizontal frequencies
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[x][u] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[y][v] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[x][u] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[y][v] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

fn jpeg_plane(plane: &[f64], w: usize, h: usize, table: &[f64; 64]) -> Vec<f64> {
    let pw = w.div_ceil(8) * 8;
    let ph = h.div_ceil(8) * 8;
    let mut out = vec![0.0; w * h];
    let mut block = [0.0; 64];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    // edge replication for padding
                    let sx = (bx + x).min(w - 1);
                    let sy = (by + y).min(h - 1);
                    block[y * 8 + x] = (plane[sy * w + sx] - 0.5) * 255.0;
                }
            }
            let mut coef = dct8x8(&block);
            for (c, q) in coef.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let rec = idct8x8(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    let (ox, oy) = (bx + x, by + y);
                    if ox < w && oy < h {
                        out[oy * w + ox] = rec[y * 8 + x] / 255.0 + 0.5;
                    }
                }
            }
        }
    }
    out
}

/// Per-channel block-DCT quantization round trip at the given JPEG quality.
pub fn jpeg_roundtrip(patch: &Patch, quality: u8) -> Result<Patch> {
    let table = quant_table(quality)?;
    let (w, h) = (patch.width(), patch.height());
    let planes = [0, 1, 2].map(|c| jpeg_plane(&patch.channel(c), w, h, &table));
    Ok(patch.from_channels([&planes[0], &planes[1], &planes[2]]))
}

/// The PathBlur chain: with probability `apply_probability`, blur with a
/// uniformly drawn sigma, then optionally add Poisson noise, then optionally
/// apply a JPEG round trip at a uniformly drawn quality.
pub fn path_blur(patch: &Patch, cfg: &PathBlurConfig, rng: &mut impl Rng) -> Patch {
    if rng.random::<f64>() >= cfg.apply_probability {
        return patch.clone();
    }
    let (slo, shi) = cfg.sigma_range;
    let sigma = slo + (shi - slo) * rng.random::<f64>();
    let mut out = gaussian_blur(patch, sigma);
    if cfg.poisson_enabled {
        out = poisson_noise(&out, cfg.photon_scale, rng);
    }
    if cfg.jpeg_enabled {
        let q = rng.random_range(cfg.quality_range.0..=cfg.quality_range.1);
        out = jpeg_roundtrip(&out, q).expect("validated quality range");
    }
    out
}
