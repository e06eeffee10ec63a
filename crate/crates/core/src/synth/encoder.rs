use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::embeddings::{EmbeddingRecord, TokenGrid};
use crate::error::{Error, Result};
use crate::imagecolor::rgb_to_hsv;
use crate::patch::Patch;
use crate::seed;

pub const TOY_INPUT: usize = 224;
pub const TOY_TOKEN: usize = 16;
pub const TOY_GRID: usize = TOY_INPUT / TOY_TOKEN;
pub const TOY_DIM: usize = 32;
/// Mean RGB, RGB std, RMS luma gradient and an 8-bin hue histogram.
pub const TOKEN_FEATURES: usize = 15;
const HUE_BINS: usize = 8;
const PROJECTION_SEED: u64 = 0x7e57_c0de;

/// Hand-crafted token features followed by a fixed random projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    /// `TOY_DIM x TOKEN_FEATURES`, row-major.
    projection: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let scale = 1.0 / (TOKEN_FEATURES as f64).sqrt();
        Self {
            projection: (0..TOY_DIM * TOKEN_FEATURES)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    /// Raw features of the token whose top-left pixel is `(x0, y0)`.
    pub fn token_features(patch: &Patch, x0: usize, y0: usize) -> [f64; TOKEN_FEATURES] {
        let mut f = [0.0; TOKEN_FEATURES];
        let n = (TOY_TOKEN * TOY_TOKEN) as f64;
        let mut luma = [[0.0; TOY_TOKEN]; TOY_TOKEN];
        let mut sq = [0.0; 3];
        for dy in 0..TOY_TOKEN {
            for dx in 0..TOY_TOKEN {
                let p = patch.pixel(x0 + dx, y0 + dy);
                for c in 0..3 {
                    f[c] += p[c];
                    sq[c] += p[c] * p[c];
                }
                luma[dy][dx] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
                let h = rgb_to_hsv(p)[0];
                let bin = ((h * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
                f[7 + bin] += 1.0 / n;
            }
        }
        for c in 0..3 {
            f[c] /= n;
            f[3 + c] = (sq[c] / n - f[c] * f[c]).max(0.0).sqrt();
        }
        let mut grad = 0.0;
        let mut pairs = 0.0;
        for dy in 0..TOY_TOKEN {
            for dx in 0..TOY_TOKEN {
                if dx + 1 < TOY_TOKEN {
                    grad += (luma[dy][dx + 1] - luma[dy][dx]).powi(2);
                    pairs += 1.0;
                }
                if dy + 1 < TOY_TOKEN {
                    grad += (luma[dy + 1][dx] - luma[dy][dx]).powi(2);
                    pairs += 1.0;
                }
            }
        }
        f[6] = (grad / pairs).sqrt();
        f
    }

    fn project(&self, f: &[f64; TOKEN_FEATURES]) -> [f32; TOY_DIM] {
        std::array::from_fn(|k| {
            let row = &self.projection[k * TOKEN_FEATURES..(k + 1) * TOKEN_FEATURES];
            row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() as f32
        })
    }

    /// Encodes a `224 x 224` patch into a full `14 x 14` token grid and a
    /// class embedding equal to the token mean. Ids are taken from the patch
    /// provenance; `patch_id` is left for the caller to set.
    pub fn encode(&self, patch: &Patch) -> Result<EmbeddingRecord> {
        if patch.width() != TOY_INPUT || patch.height() != TOY_INPUT {
            return Err(Error::invalid(format!(
                "toy encoder expects {TOY_INPUT}x{TOY_INPUT} input, got {}x{}",
                patch.width(),
                patch.height()
            )));
        }
        let mut data = Vec::with_capacity(TOY_GRID * TOY_GRID * TOY_DIM);
        for ty in 0..TOY_GRID {
            for tx in 0..TOY_GRID {
                let f = Self::token_features(patch, tx * TOY_TOKEN, ty * TOY_TOKEN);
                data.extend_from_slice(&self.project(&f));
            }
        }
        let tokens = TokenGrid::new(TOY_GRID, TOY_DIM, data)?;
        let cls = tokens.mean().into_iter().map(|v| v as f32).collect();
        Ok(EmbeddingRecord {
            patch_id: String::new(),
            slide_id: patch.slide_id.clone(),
            case_id: patch.case_id.clone(),
            magnification: patch.magnification,
            cls,
            tokens: Some(tokens),
        })
    }
}

impl Default for ToyEncoder {
    fn default() -> Self {
        Self::new(PROJECTION_SEED)
    }
}

/// Encodes with the shared default projection.
pub fn toy_encoder(patch: &Patch) -> Result<EmbeddingRecord> {
    static ENCODER: OnceLock<ToyEncoder> = OnceLock::new();
    ENCODER.get_or_init(ToyEncoder::default).encode(patch)
}
