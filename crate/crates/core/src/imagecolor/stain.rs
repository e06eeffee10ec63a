//! Reinhard colour transfer and the RandStainNA augmentation built on it.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::convert::{convert, convert_back, ColorSpace};
use crate::error::{Error, Result};
use crate::patch::Patch;
use crate::seed;

/// Floor on the source standard deviation in the Reinhard division.
pub const REINHARD_STD_FLOOR: f64 = 1e-6;

/// First and second moments of each channel in one colour space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub space: ColorSpace,
    pub mean: [f64; 3],
    /// Population standard deviation.
    pub std: [f64; 3],
}

/// Gaussian fits, across images, of one channel's mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub mean_of_means: f64,
    pub std_of_means: f64,
    pub mean_of_stds: f64,
    pub std_of_stds: f64,
}

/// Sampling distribution for RandStainNA targets.
///
/// Serialized as JSON with keys `n_fit_images`, `lab`, `hsv` and `hed`; each
/// space holds three [`ChannelFit`] objects in channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StainTemplate {
    pub n_fit_images: usize,
    pub lab: [ChannelFit; 3],
    pub hsv: [ChannelFit; 3],
    pub hed: [ChannelFit; 3],
}

impl StainTemplate {
    pub fn space(&self, space: ColorSpace) -> &[ChannelFit; 3] {
        match space {
            ColorSpace::Lab => &self.lab,
            ColorSpace::Hsv => &self.hsv,
            ColorSpace::Hed => &self.hed,
        }
    }

    fn space_mut(&mut self, space: ColorSpace) -> &mut [ChannelFit; 3] {
        match space {
            ColorSpace::Lab => &mut self.lab,
            ColorSpace::Hsv => &mut self.hsv,
            ColorSpace::Hed => &mut self.hed,
        }
    }

    /// A template that always samples exactly `stats` in each space.
    pub fn degenerate(stats: [ColorStats; 3]) -> Self {
        let fit = |s: &ColorStats, c: usize| ChannelFit {
            mean_of_means: s.mean[c],
            std_of_means: 0.0,
            mean_of_stds: s.std[c],
            std_of_stds: 0.0,
        };
        let mut t = StainTemplate {
            n_fit_images: 1,
            lab: [fit(&stats[0], 0); 3],
            hsv: [fit(&stats[0], 0); 3],
            hed: [fit(&stats[0], 0); 3],
        };
        for s in &stats {
            *t.space_mut(s.space) = [fit(s, 0), fit(s, 1), fit(s, 2)];
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fit_images == 0 {
            return Err(Error::invalid("template fitted on zero images"));
        }
        for space in ColorSpace::ALL {
            for f in self.space(space) {
                let vals = [f.mean_of_means, f.std_of_means, f.mean_of_stds, f.std_of_stds];
                if vals.iter().any(|v| !v.is_finite()) || f.std_of_means < 0.0 || f.std_of_stds < 0.0 {
                    return Err(Error::invalid(format!("invalid {space:?} channel fit {f:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Mean and population standard deviation of converted channel values.
pub fn stats_of_values(values: &[[f64; 3]], space: ColorSpace) -> ColorStats {
    let n = values.len() as f64;
    let mut mean = [0.0; 3];
    for v in values {
        for c in 0..3 {
            mean[c] += v[c];
        }
    }
    mean = mean.map(|m| m / n);
    let mut var = [0.0; 3];
    for v in values {
        for c in 0..3 {
            let d = v[c] - mean[c];
            var[c] += d * d;
        }
    }
    ColorStats {
        space,
        mean,
        std: var.map(|s| (s / n).sqrt()),
    }
}

pub fn channel_stats(patch: &Patch, space: ColorSpace) -> ColorStats {
    stats_of_values(&convert(patch, space), space)
}

/// Per-channel affine transfer of `values` from `source` statistics to `target`.
/// Equal statistics return the input unchanged.
pub fn reinhard_transfer(values: &[[f64; 3]], source: &ColorStats, target: &ColorStats) -> Vec<[f64; 3]> {
    if source.mean == target.mean && source.std == target.std {
        return values.to_vec();
    }
    let scale: [f64; 3] = std::array::from_fn(|c| target.std[c] / source.std[c].max(REINHARD_STD_FLOOR));
    values
        .iter()
        .map(|v| std::array::from_fn(|c| (v[c] - source.mean[c]) * scale[c] + target.mean[c]))
        .collect()
}

// Order-independent mean and sample standard deviation.
fn gaussian_fit(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Fits a [`StainTemplate`] from at most `max_images` patches drawn at random
/// (by `seed`) from `patches`.
pub fn fit_template(patches: &[Patch], max_images: usize, seed: u64) -> Result<StainTemplate> {
    if patches.len() < 2 {
        return Err(Error::invalid(format!(
            "template fitting needs at least 2 patches, got {}",
            patches.len()
        )));
    }
    if max_images < 2 {
        return Err(Error::invalid("max_images must be at least 2"));
    }
    let chosen: Vec<&Patch> = if patches.len() > max_images {
        let mut rng = seed::rng(seed);
        let mut idx = index::sample(&mut rng, patches.len(), max_images).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &patches[i]).collect()
    } else {
        patches.iter().collect()
    };

    let zero = ChannelFit {
        mean_of_means: 0.0,
        std_of_means: 0.0,
        mean_of_stds: 0.0,
        std_of_stds: 0.0,
    };
    let mut template = StainTemplate {
        n_fit_images: chosen.len(),
        lab: [zero; 3],
        hsv: [zero; 3],
        hed: [zero; 3],
    };
    for space in ColorSpace::ALL {
        let stats: Vec<ColorStats> = chosen.iter().map(|p| channel_stats(p, space)).collect();
        let fits = template.space_mut(space);
        for (c, fit) in fits.iter_mut().enumerate() {
            let mut means: Vec<f64> = stats.iter().map(|s| s.mean[c]).collect();
            let mut stds: Vec<f64> = stats.iter().map(|s| s.std[c]).collect();
            let (mean_of_means, std_of_means) = gaussian_fit(&mut means);
            let (mean_of_stds, std_of_stds) = gaussian_fit(&mut stds);
            *fit = ChannelFit {
                mean_of_means,
                std_of_means,
                mean_of_stds,
                std_of_stds,
            };
        }
    }
    Ok(template)
}

fn sample_target(fits: &[ChannelFit; 3], space: ColorSpace, rng: &mut impl Rng) -> ColorStats {
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for (c, f) in fits.iter().enumerate() {
        mean[c] = Normal::new(f.mean_of_means, f.std_of_means)
            .expect("validated template")
            .sample(rng);
        std[c] = Normal::new(f.mean_of_stds, f.std_of_stds)
            .expect("validated template")
            .sample(rng)
            .max(0.0);
    }
    ColorStats { space, mean, std }
}

/// RandStainNA: picks a colour space uniformly, samples target statistics
/// from the template and Reinhard-transfers the patch towards them.
/// Returns the augmented patch and the space that was used.
pub fn randstainna_with_space(patch: &Patch, template: &StainTemplate, rng: &mut impl Rng) -> (Patch, ColorSpace) {
    let space = ColorSpace::ALL[rng.random_range(0..3)];
    let target = sample_target(template.space(space), space, rng);
    let values = convert(patch, space);
    let source = stats_of_values(&values, space);
    let moved = reinhard_transfer(&values, &source, &target);
    (patch.with_triples(&convert_back(&moved, space)), space)
}

pub fn randstainna(patch: &Patch, template: &StainTemplate, rng: &mut impl Rng) -> Patch {
    randstainna_with_space(patch, template, rng).0
}
