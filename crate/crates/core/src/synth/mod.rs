//! Synthetic histology-like patches, a deterministic toy encoder and
//! benchmark generators with known ground truth.

mod bench;
mod encoder;

pub use bench::{
    benchmark_task_data, desk_benchmark, embed_plans, make_center_label_task, CENTER_REGION, make_titration_task, make_whole_control_task, plan_benchmark, render_planned,
    CenterTaskConfig, LabelMode, LabelRegion, PatchPlan, Split, SplitSlides, SynthBenchmark, SynthTaskConfig,
};
pub use encoder::{toy_encoder, ToyEncoder, TOKEN_FEATURES, TOY_DIM, TOY_GRID, TOY_INPUT, TOY_TOKEN};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecolor::hsv_to_rgb;
use crate::patch::{Magnification, Patch};
use crate::seed;

/// Side of generated patches.
pub const PATCH_SIZE: usize = 224;
/// Relative amplitude of the sinusoidal texture.
pub const TEXTURE_AMPLITUDE: f64 = 0.08;
/// Colour of the dark elliptical objects.
pub const BLOB_HSV: [f64; 3] = [0.78, 0.55, 0.38];

/// Appearance of one synthetic class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClassParams {
    /// Hue of the background wash, in turns.
    pub base_hue: f64,
    /// Expected objects per 10^4 square pixels at 10x.
    pub blob_density: f64,
    /// Object radius range in pixels at 10x.
    pub blob_radius: (f64, f64),
    /// Texture cycles per 100 pixels at 10x.
    pub texture_freq: f64,
    pub noise_sigma: f64,
}

impl Default for SynthClassParams {
    fn default() -> Self {
        Self {
            base_hue: 0.9,
            blob_density: 4.0,
            blob_radius: (3.0, 6.0),
            texture_freq: 3.0,
            noise_sigma: 0.02,
        }
    }
}

impl SynthClassParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.blob_radius;
        let ok = (0.0..1.0).contains(&self.base_hue)
            && self.blob_density >= 0.0
            && lo > 0.0
            && lo <= hi
            && self.texture_freq > 0.0
            && self.noise_sigma >= 0.0
            && [self.blob_density, hi, self.texture_freq, self.noise_sigma].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid synthetic class parameters {self:?}")))
        }
    }
}

/// Per-slide perturbation of class parameters: hue shift, object density
/// and texture frequency scaling, all with spread `heterogeneity`.
pub fn slide_jitter(params: &SynthClassParams, slide_seed: u64, heterogeneity: f64) -> SynthClassParams {
    if heterogeneity <= 0.0 {
        return *params;
    }
    let mut rng = seed::rng(seed::derive(slide_seed, "slide-jitter"));
    let n = Normal::new(0.0, heterogeneity).expect("positive spread");
    let mut p = *params;
    p.base_hue = (p.base_hue + 0.25 * n.sample(&mut rng)).rem_euclid(1.0);
    p.blob_density *= n.sample(&mut rng).exp();
    p.texture_freq *= (0.5 * n.sample(&mut rng)).exp();
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Every random choice behind one generated patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub size: usize,
    pub wash: [f64; 3],
    /// Texture frequency in cycles per pixel.
    pub freq: f64,
    pub theta: f64,
    pub phase: f64,
    pub blobs: Vec<Ellipse>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl PatchLayout {
    /// Background wash plus texture at pixel `(x, y)`, before objects and noise.
    pub fn background(&self, x: usize, y: usize) -> [f64; 3] {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = 2.0 * PI * self.freq * (px * self.theta.cos() + py * self.theta.sin()) + self.phase;
        let m = 1.0 + TEXTURE_AMPLITUDE * t.sin();
        self.wash.map(|w| w * m)
    }
}

/// Draws the layout of patch `index` of the slide seeded by `seed`.
pub fn patch_layout(params: &SynthClassParams, mag: Magnification, seed: u64, index: u64, size: usize) -> PatchLayout {
    let mut rng = seed::rng(seed::derive_index(seed, index));
    let rel = mag.relative_to_10x();
    let hue = (params.base_hue + 0.01 * (2.0 * rng.random::<f64>() - 1.0)).rem_euclid(1.0);
    let sat = 0.35 + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
    let val = 0.88 + 0.04 * (2.0 * rng.random::<f64>() - 1.0);
    let theta = PI * rng.random::<f64>();
    let phase = 2.0 * PI * rng.random::<f64>();
    let side = size as f64;
    let lambda = params.blob_density * side * side / 1e4 / (rel * rel);
    let n_blobs = if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let (lo, hi) = params.blob_radius;
    let blobs = (0..n_blobs)
        .map(|_| {
            let r = (lo + (hi - lo) * rng.random::<f64>()) * rel;
            Ellipse {
                cx: side * rng.random::<f64>(),
                cy: side * rng.random::<f64>(),
                a: r,
                b: r * (0.6 + 0.4 * rng.random::<f64>()),
                angle: PI * rng.random::<f64>(),
            }
        })
        .collect();
    PatchLayout {
        size,
        wash: hsv_to_rgb([hue, sat, val]),
        freq: params.texture_freq / 100.0 / rel,
        theta,
        phase,
        blobs,
        noise_sigma: params.noise_sigma,
        noise_seed: rng.random(),
    }
}

/// Renders background and objects of `layout` into `buf` (interleaved RGB of
/// a `size x size` image) inside the half-open pixel box `clip`. With
/// `background` false only the objects are drawn.
pub(crate) fn paint(layout: &PatchLayout, buf: &mut [f64], clip: (usize, usize, usize, usize), background: bool) {
    let (x0, y0, x1, y1) = clip;
    let s = layout.size;
    if background {
        for y in y0..y1 {
            for x in x0..x1 {
                let i = (y * s + x) * 3;
                buf[i..i + 3].copy_from_slice(&layout.background(x, y));
            }
        }
    }
    let blob = hsv_to_rgb(BLOB_HSV);
    for e in &layout.blobs {
        let r = e.a.max(e.b);
        let bx0 = ((e.cx - r).floor().max(x0 as f64)) as usize;
        let by0 = ((e.cy - r).floor().max(y0 as f64)) as usize;
        let bx1 = ((e.cx + r).ceil().max(0.0) as usize).min(x1);
        let by1 = ((e.cy + r).ceil().max(0.0) as usize).min(y1);
        for y in by0..by1 {
            for x in bx0..bx1 {
                if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let i = (y * s + x) * 3;
                    buf[i..i + 3].copy_from_slice(&blob);
                }
            }
        }
    }
}

pub(crate) fn add_noise(buf: &mut [f64], sigma: f64, noise_seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = seed::rng(noise_seed);
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    for v in buf.iter_mut() {
        *v += n.sample(&mut rng);
    }
}

pub fn render(layout: &PatchLayout) -> Patch {
    let s = layout.size;
    let mut buf = vec![0.0; s * s * 3];
    paint(layout, &mut buf, (0, 0, s, s), true);
    add_noise(&mut buf, layout.noise_sigma, layout.noise_seed);
    Patch::from_rgb(s, s, buf).expect("finite pixels")
}

/// A `224 x 224` synthetic patch, fully determined by `(seed, index)`.
pub fn gen_patch(params: &SynthClassParams, mag: Magnification, seed: u64, index: u64) -> Patch {
    let mut p = render(&patch_layout(params, mag, seed, index, PATCH_SIZE));
    p.magnification = mag;
    p
}

/// Areas of 4-connected components of pixels with luma below `threshold`,
/// excluding components that touch the border.
pub fn blob_areas(patch: &Patch, threshold: f64) -> Vec<usize> {
    let (w, h) = (patch.width(), patch.height());
    let dark: Vec<bool> = patch
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] < threshold)
        .collect();
    let mut seen = vec![false; w * h];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !dark[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0;
        let mut border = false;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = (i % w, i / w);
            border |= x == 0 || y == 0 || x == w - 1 || y == h - 1;
            let mut visit = |j: usize| {
                if dark[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if !border {
            areas.push(area);
        }
    }
    areas
}
