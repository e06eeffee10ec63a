use std::fmt;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::toy_encoder;
use super::{add_noise, paint, patch_layout, slide_jitter, SynthClassParams, PATCH_SIZE};
use crate::embeddings::{compose_feature, EmbeddingRecord, FeatureMode};
use crate::error::{Error, Result};
use crate::probe::{SplitData, TaskData, TaskSplits};
use crate::patch::{Magnification, Patch};
use crate::seed;

/// Where the class signal lives in a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRegion {
    #[serde(rename = "whole")]
    Whole,
    /// Only the central 32 x 32 pixels carry the class; the rest is drawn
    /// from a shared distractor distribution.
    #[serde(rename = "center_32px")]
    Center32,
}

/// Side of the labelled centre region.
pub const CENTER_REGION: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Every patch of a slide has the slide's class.
    PerSlide,
    /// Each patch draws its class independently.
    PerPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Tune,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Tune, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Tune => "tune",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slides per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSlides {
    pub train: usize,
    pub tune: usize,
    pub test: usize,
}

impl SplitSlides {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Tune => self.tune,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTaskConfig {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    pub classes: Vec<SynthClassParams>,
    /// Appearance outside the labelled region; required for `center_32px`.
    #[serde(default)]
    pub distractor: Option<SynthClassParams>,
    pub label_region: LabelRegion,
    pub label_mode: LabelMode,
    pub slides: SplitSlides,
    pub patches_per_slide: usize,
    /// Spread of the per-slide appearance perturbation.
    #[serde(default)]
    pub slide_heterogeneity: f64,
}

fn one() -> f64 {
    1.0
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("task {}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['\t', '\n', '/']) {
            return bad("name must be non-empty without tabs, newlines or slashes".into());
        }
        if self.classes.len() < 2 {
            return bad("needs at least two classes".into());
        }
        for c in self.classes.iter().chain(&self.distractor) {
            c.validate()?;
        }
        if self.label_region == LabelRegion::Center32 && self.distractor.is_none() {
            return bad("center_32px tasks need distractor parameters".into());
        }
        if self.patches_per_slide == 0 || Split::ALL.iter().any(|&s| self.slides.get(s) == 0) {
            return bad("every split needs slides and patches".into());
        }
        if !(self.weight > 0.0) || !(self.slide_heterogeneity >= 0.0) {
            return bad("weight must be positive and heterogeneity non-negative".into());
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// A set of synthetic tasks rendered at several magnifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBenchmark {
    pub tasks: Vec<SynthTaskConfig>,
    #[serde(default = "probe_levels")]
    pub magnifications: Vec<Magnification>,
}

fn probe_levels() -> Vec<Magnification> {
    Magnification::PROBE_LEVELS.to_vec()
}

impl SynthBenchmark {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.magnifications.is_empty() {
            return Err(Error::invalid("benchmark needs tasks and magnifications"));
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tasks {
            t.validate()?;
            if !names.insert(&t.name) {
                return Err(Error::invalid(format!("duplicate task name {}", t.name)));
            }
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.magnifications.len()
            * self
                .tasks
                .iter()
                .map(|t| t.patches_per_slide * (t.slides.train + t.slides.tune + t.slides.test))
                .sum::<usize>()
    }
}

/// Desk-scale default: three separable three-class tasks (wash hue, object
/// density, texture frequency), 60 slides of 50 patches each.
pub fn desk_benchmark() -> SynthBenchmark {
    let base = SynthClassParams::default();
    let task = |name: &str, classes: Vec<SynthClassParams>| SynthTaskConfig {
        name: name.to_string(),
        weight: 1.0,
        classes,
        distractor: None,
        label_region: LabelRegion::Whole,
        label_mode: LabelMode::PerSlide,
        slides: SplitSlides { train: 36, tune: 12, test: 12 },
        patches_per_slide: 50,
        slide_heterogeneity: 0.05,
    };
    SynthBenchmark {
        tasks: vec![
            task(
                "hue",
                [0.85, 0.95, 0.05].map(|h| SynthClassParams { base_hue: h, ..base }).to_vec(),
            ),
            task(
                "density",
                [1.0, 6.0, 16.0].map(|d| SynthClassParams { blob_density: d, ..base }).to_vec(),
            ),
            task(
                "texture",
                [1.5, 4.0, 9.0].map(|f| SynthClassParams { texture_freq: f, ..base }).to_vec(),
            ),
        ],
        magnifications: probe_levels(),
    }
}

/// Size and shape of the centre-label and control tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterTaskConfig {
    pub name: String,
    pub slides: SplitSlides,
    pub patches_per_slide: usize,
    /// Object density of the shared periphery.
    pub distractor_density: f64,
    /// Object density inside the centre region for each class.
    pub center_densities: Vec<f64>,
}

impl Default for CenterTaskConfig {
    fn default() -> Self {
        Self {
            name: "center".into(),
            slides: SplitSlides { train: 24, tune: 8, test: 8 },
            patches_per_slide: 40,
            distractor_density: 15.0,
            center_densities: vec![0.0, 30.0, 80.0],
        }
    }
}

/// A task whose class is visible only in the central 32 x 32 pixels (the
/// centre 2 x 2 tokens): the classes differ in how many objects sit there,
/// with the same object size and colour as the periphery.
pub fn make_center_label_task(cfg: &CenterTaskConfig) -> SynthTaskConfig {
    let base = SynthClassParams {
        blob_radius: (3.0, 5.0),
        ..SynthClassParams::default()
    };
    SynthTaskConfig {
        name: cfg.name.clone(),
        weight: 1.0,
        classes: cfg
            .center_densities
            .iter()
            .map(|&d| SynthClassParams { blob_density: d, ..base })
            .collect(),
        distractor: Some(SynthClassParams {
            blob_density: cfg.distractor_density,
            ..base
        }),
        label_region: LabelRegion::Center32,
        label_mode: LabelMode::PerPatch,
        slides: cfg.slides,
        patches_per_slide: cfg.patches_per_slide,
        slide_heterogeneity: 0.0,
    }
}

/// The matching control: same periphery statistics, but the class (wash
/// hue) covers the whole patch.
pub fn make_whole_control_task(cfg: &CenterTaskConfig) -> SynthTaskConfig {
    let base = SynthClassParams {
        blob_radius: (3.0, 5.0),
        blob_density: cfg.distractor_density,
        ..SynthClassParams::default()
    };
    let hues = [0.85, 0.95, 0.05, 0.75, 0.15];
    SynthTaskConfig {
        name: format!("{}_control", cfg.name),
        weight: 1.0,
        classes: (0..cfg.center_densities.len())
            .map(|k| SynthClassParams {
                base_hue: hues[k % hues.len()],
                ..base
            })
            .collect(),
        distractor: None,
        label_region: LabelRegion::Whole,
        label_mode: LabelMode::PerPatch,
        slides: cfg.slides,
        patches_per_slide: cfg.patches_per_slide,
        slide_heterogeneity: 0.0,
    }
}

/// Two classes separated by object density under strong per-slide
/// appearance shifts, so that generalisation depends on slide count.
pub fn make_titration_task(train_slides: usize, patches_per_slide: usize, heterogeneity: f64) -> SynthTaskConfig {
    let base = SynthClassParams::default();
    SynthTaskConfig {
        name: "titration".into(),
        weight: 1.0,
        classes: vec![
            SynthClassParams { blob_density: 3.0, ..base },
            SynthClassParams { blob_density: 9.0, ..base },
        ],
        distractor: None,
        label_region: LabelRegion::Whole,
        label_mode: LabelMode::PerPatch,
        slides: SplitSlides {
            train: train_slides,
            tune: (train_slides / 4).max(5),
            test: (train_slides / 2).max(5),
        },
        patches_per_slide,
        slide_heterogeneity: heterogeneity,
    }
}

/// Everything needed to render and label one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub task: usize,
    pub task_name: String,
    pub split: Split,
    pub slide_index: usize,
    pub slide_id: String,
    pub case_id: String,
    /// Shared across magnifications of the same location.
    pub patch_id: String,
    pub index: u64,
    pub label: usize,
    pub magnification: Magnification,
    pub slide_seed: u64,
}

/// Lists every patch of the benchmark in task, split, slide, patch,
/// magnification order. Slide ids embed the split, so splits never share
/// a slide.
pub fn plan_benchmark(bench: &SynthBenchmark, master_seed: u64) -> Result<Vec<PatchPlan>> {
    bench.validate()?;
    let mut out = Vec::with_capacity(bench.n_patches());
    for (t, task) in bench.tasks.iter().enumerate() {
        let c = task.n_classes();
        for split in Split::ALL {
            for s in 0..task.slides.get(split) {
                let slide_id = format!("{}-{}-s{:03}", task.name, split, s);
                let slide_seed = seed::derive(master_seed, &slide_id);
                let label_seed = seed::derive(slide_seed, "labels");
                for p in 0..task.patches_per_slide {
                    let label = match task.label_mode {
                        LabelMode::PerSlide => s % c,
                        LabelMode::PerPatch => seed::rng(seed::derive_index(label_seed, p as u64)).random_range(0..c),
                    };
                    for &mag in &bench.magnifications {
                        out.push(PatchPlan {
                            task: t,
                            task_name: task.name.clone(),
                            split,
                            slide_index: s,
                            slide_id: slide_id.clone(),
                            case_id: format!("case-{slide_id}"),
                            patch_id: format!("{slide_id}-p{p:03}"),
                            index: p as u64,
                            label,
                            magnification: mag,
                            slide_seed,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Renders a planned patch.
pub fn render_planned(bench: &SynthBenchmark, plan: &PatchPlan) -> Result<Patch> {
    let task = bench
        .tasks
        .get(plan.task)
        .ok_or_else(|| Error::invalid(format!("plan refers to missing task {}", plan.task)))?;
    let class = task
        .classes
        .get(plan.label)
        .ok_or_else(|| Error::invalid(format!("label {} out of range for task {}", plan.label, task.name)))?;
    let h = task.slide_heterogeneity;
    let s = PATCH_SIZE;
    let mut buf = vec![0.0; s * s * 3];
    let noise = match task.label_region {
        LabelRegion::Whole => {
            let layout = patch_layout(&slide_jitter(class, plan.slide_seed, h), plan.magnification, plan.slide_seed, plan.index, s);
            paint(&layout, &mut buf, (0, 0, s, s), true);
            (layout.noise_sigma, layout.noise_seed)
        }
        LabelRegion::Center32 => {
            let distractor = task.distractor.as_ref().expect("validated");
            let outer = patch_layout(&slide_jitter(distractor, plan.slide_seed, h), plan.magnification, plan.slide_seed, plan.index, s);
            paint(&outer, &mut buf, (0, 0, s, s), true);
            // Objects inside the centre box come only from the class.
            let lo = s / 2 - CENTER_REGION / 2;
            let hi = lo + CENTER_REGION;
            let clean = super::PatchLayout {
                blobs: Vec::new(),
                ..outer.clone()
            };
            paint(&clean, &mut buf, (lo, lo, hi, hi), true);
            let inner = patch_layout(
                &slide_jitter(class, plan.slide_seed, h),
                plan.magnification,
                seed::derive(plan.slide_seed, "center"),
                plan.index,
                s,
            );
            paint(&inner, &mut buf, (lo, lo, hi, hi), false);
            (outer.noise_sigma, outer.noise_seed)
        }
    };
    add_noise(&mut buf, noise.0, noise.1);
    let mut patch = Patch::from_rgb(s, s, buf)?.with_provenance(plan.slide_id.clone(), plan.case_id.clone(), plan.magnification);
    patch.origin = (plan.index as i64, 0);
    Ok(patch)
}

/// Renders and encodes planned patches with the toy encoder. Record patch
/// ids come from the plan; token grids are dropped unless `keep_tokens`.
pub fn embed_plans(bench: &SynthBenchmark, plans: &[PatchPlan], keep_tokens: bool) -> Result<Vec<EmbeddingRecord>> {
    plans
        .par_iter()
        .map(|plan| {
            let mut rec = toy_encoder(&render_planned(bench, plan)?)?;
            rec.patch_id = plan.patch_id.clone();
            if !keep_tokens {
                rec.tokens = None;
            }
            Ok(rec)
        })
        .collect()
}

/// Assembles probe inputs from plans and their records (matched by
/// position).
pub fn benchmark_task_data(
    bench: &SynthBenchmark,
    plans: &[PatchPlan],
    records: &[EmbeddingRecord],
    mode: FeatureMode,
) -> Result<Vec<TaskData>> {
    if plans.len() != records.len() {
        return Err(Error::DimensionMismatch {
            expected: plans.len(),
            actual: records.len(),
        });
    }
    let feats = records
        .par_iter()
        .map(|r| compose_feature(r, mode))
        .collect::<Result<Vec<_>>>()?;
    let width = feats.first().map_or(0, Vec::len);
    bench
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let mut per_magnification = BTreeMap::new();
            for &mag in &bench.magnifications {
                let split = |split: Split| -> Result<SplitData> {
                    let idx: Vec<usize> = (0..plans.len())
                        .filter(|&i| plans[i].task == t && plans[i].split == split && plans[i].magnification == mag)
                        .collect();
                    let data: Vec<f64> = idx.iter().flat_map(|&i| feats[i].iter().copied()).collect();
                    Ok(SplitData {
                        x: Array2::from_shape_vec((idx.len(), width), data).map_err(|e| Error::invalid(e.to_string()))?,
                        y: idx.iter().map(|&i| plans[i].label).collect(),
                        slides: idx.iter().map(|&i| plans[i].slide_id.clone()).collect(),
                    })
                };
                per_magnification.insert(
                    mag,
                    TaskSplits {
                        train: split(Split::Train)?,
                        tune: split(Split::Tune)?,
                        test: split(Split::Test)?,
                    },
                );
            }
            Ok(TaskData {
                name: task.name.clone(),
                weight: task.weight,
                n_classes: task.n_classes(),
                per_magnification,
            })
        })
        .collect()
}
