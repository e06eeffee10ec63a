use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::convert::{hsv_to_rgb, rgb_to_hsv};
use crate::patch::Patch;

/// Colour jitter magnitudes (brightness, contrast, saturation, hue).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterStrength {
    pub const WEAK: Self = Self::new(0.2, 0.2, 0.2, 0.05);
    pub const MODERATE: Self = Self::new(0.4, 0.4, 0.4, 0.1);
    pub const STRONG: Self = Self::new(0.8, 0.8, 0.8, 0.2);
    pub const NONE: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(brightness: f64, contrast: f64, saturation: f64, hue: f64) -> Self {
        Self {
            brightness,
            contrast,
            saturation,
            hue,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "weak" => Some(Self::WEAK),
            "moderate" => Some(Self::MODERATE),
            "strong" => Some(Self::STRONG),
            "none" => Some(Self::NONE),
            _ => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.brightness >= 0.0
            && self.contrast >= 0.0
            && self.saturation >= 0.0
            && (0.0..=0.5).contains(&self.hue)
    }
}

impl Default for JitterStrength {
    fn default() -> Self {
        Self::MODERATE
    }
}

/// A single jitter operation with its factor already drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterOp {
    Brightness(f64),
    Contrast(f64),
    Saturation(f64),
    /// Hue rotation in turns, wrapped modulo 1.
    Hue(f64),
}

fn luma(p: &[f64]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Applies one jitter operation and clamps the result.
pub fn apply_jitter_op(patch: &Patch, op: JitterOp) -> Patch {
    let data = patch.data();
    let out: Vec<f64> = match op {
        JitterOp::Brightness(f) => data.iter().map(|v| v * f).collect(),
        JitterOp::Contrast(f) => {
            let mean = data.chunks_exact(3).map(luma).sum::<f64>() / patch.n_pixels() as f64;
            data.iter().map(|v| f * v + (1.0 - f) * mean).collect()
        }
        JitterOp::Saturation(f) => data
            .chunks_exact(3)
            .flat_map(|px| {
                let g = luma(px);
                [0, 1, 2].map(|c| f * px[c] + (1.0 - f) * g)
            })
            .collect(),
        JitterOp::Hue(delta) => data
            .chunks_exact(3)
            .flat_map(|px| {
                let mut hsv = rgb_to_hsv([px[0], px[1], px[2]]);
                hsv[0] = (hsv[0] + delta).rem_euclid(1.0);
                hsv_to_rgb(hsv)
            })
            .collect(),
    };
    patch.with_pixels(out)
}

fn factor(rng: &mut impl Rng, s: f64) -> f64 {
    let lo = (1.0 - s).max(0.0);
    let hi = 1.0 + s;
    lo + (hi - lo) * rng.random::<f64>()
}

/// Colour jitter: with probability `apply_probability`, applies brightness,
/// contrast, saturation and hue jitter in a random order.
pub fn color_jitter(patch: &Patch, strength: &JitterStrength, apply_probability: f64, rng: &mut impl Rng) -> Patch {
    if rng.random::<f64>() >= apply_probability {
        return patch.clone();
    }
    let mut ops = [
        JitterOp::Brightness(factor(rng, strength.brightness)),
        JitterOp::Contrast(factor(rng, strength.contrast)),
        JitterOp::Saturation(factor(rng, strength.saturation)),
        JitterOp::Hue(strength.hue * (2.0 * rng.random::<f64>() - 1.0)),
    ];
    ops.shuffle(rng);
    let mut out = patch.clone();
    for op in ops {
        let noop = match op {
            JitterOp::Brightness(f) | JitterOp::Contrast(f) | JitterOp::Saturation(f) => f == 1.0,
            JitterOp::Hue(d) => d == 0.0,
        };
        if !noop {
            out = apply_jitter_op(&out, op);
        }
    }
    out
}
