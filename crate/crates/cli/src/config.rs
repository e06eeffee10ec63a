//! The pipeline configuration document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pathssl_core::corruptions::PathBlurConfig;
use pathssl_core::embeddings::FeatureMode;
use pathssl_core::imagecolor::JitterStrength;
use pathssl_core::objectives::LossConfig;
use pathssl_core::probe::ProbeConfig;
use pathssl_core::synth::{desk_benchmark, SynthBenchmark, SynthClassParams};
use pathssl_core::views::MultiCropConfig;
use pathssl_core::Magnification;
use serde::{Deserialize, Serialize};

use crate::errors::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub master_seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub pathblur: PathBlurConfig,
    #[serde(default)]
    pub crops: MultiCropConfig,
    #[serde(default)]
    pub rebalance: RebalanceSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub weak: WeakSection,
    #[serde(default)]
    pub titrate: TitrateSection,
    #[serde(default)]
    pub report: ReportSection,
}

/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Written by `synth-gen`: manifest, PNG patches and label tables.
    pub corpus: PathBuf,
    /// Written by `embed-toy`: one embedding store per magnification.
    pub stores: PathBuf,
    /// Parent of the per-subcommand result directories.
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            stores: "stores".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub benchmark: SynthBenchmark,
    /// When false only the manifest and label tables are written and
    /// `embed-toy` re-renders patches from the benchmark definition.
    pub write_png: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            benchmark: desk_benchmark(),
            write_png: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    /// Store the 14 x 14 token grid next to the CLS vector; needed by the
    /// centre feature modes.
    pub keep_tokens: bool,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self { keep_tokens: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Patches used to fit the stain template.
    pub max_images: usize,
    /// Template file; when absent `augment-preview` fits one on the corpus.
    pub template: Option<PathBuf>,
    pub randstainna_probability: f64,
    pub jitter: JitterStrength,
    pub jitter_probability: f64,
    /// Corpus patches rendered by `augment-preview`.
    pub n_preview: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            max_images: 1000,
            template: None,
            randstainna_probability: 0.8,
            jitter: JitterStrength::default(),
            jitter_probability: 0.8,
            n_preview: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RebalanceSection {
    pub magnification: Magnification,
    pub feature_mode: FeatureMode,
    pub k: usize,
    pub max_iters: usize,
    /// Size of the rebalanced selection.
    pub total: usize,
}

impl Default for RebalanceSection {
    fn default() -> Self {
        Self {
            magnification: Magnification::X10,
            feature_mode: FeatureMode::ClsOnly,
            k: 20,
            max_iters: 100,
            total: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub params: LossConfig,
    /// Random instances evaluated.
    pub instances: usize,
    pub batch: usize,
    pub dim: usize,
    /// Prototypes used in place of `params.n_prototypes` to keep the
    /// benchmark small.
    pub prototypes: usize,
    pub local_views: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            params: LossConfig::default(),
            instances: 20,
            batch: 8,
            dim: 16,
            prototypes: 32,
            local_views: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub feature_mode: FeatureMode,
    /// Name of the method in rendered tables.
    pub method: String,
    /// Permute labels within each split (chance-level control).
    pub shuffle_labels: bool,
    pub sizes: ProbeConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            feature_mode: FeatureMode::ClsOnly,
            method: "toy-encoder".into(),
            shuffle_labels: false,
            sizes: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakSection {
    /// Corpus task whose case tables are used when the label paths are unset.
    pub task: Option<String>,
    /// Tables with `case_id` and `label` columns.
    pub train_labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Optional gene x case expression matrix; each gene of `gene_sets` is
    /// evaluated as a median-split task on the same train/test cases.
    pub expression: Option<PathBuf>,
    /// Gene-set file (JSON list of `{name, genes}`); defaults to the shipped sets.
    pub gene_sets: Option<PathBuf>,
    /// Optional survival table (`case_id`, `followup_years`, `event`).
    pub survival: Option<PathBuf>,
    pub magnification: Magnification,
    pub feature_mode: FeatureMode,
    pub sample_n: usize,
    pub bootstrap_replicates: usize,
    pub method: String,
}

impl Default for WeakSection {
    fn default() -> Self {
        Self {
            task: None,
            train_labels: None,
            test_labels: None,
            expression: None,
            gene_sets: None,
            survival: None,
            magnification: Magnification::X10,
            feature_mode: FeatureMode::ClsOnly,
            sample_n: pathssl_core::aggregate::DEFAULT_SAMPLE_N,
            bootstrap_replicates: pathssl_core::probe::DEFAULT_REPLICATES,
            method: "toy-encoder".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TitrateSection {
    /// Corpus task to titrate; defaults to the first task.
    pub task: Option<String>,
    pub magnification: Magnification,
    pub feature_mode: FeatureMode,
    pub fractions: Vec<f64>,
    pub subsamples: usize,
}

impl Default for TitrateSection {
    fn default() -> Self {
        Self {
            task: None,
            magnification: Magnification::X10,
            feature_mode: FeatureMode::ClsOnly,
            fractions: pathssl_core::aggregate::DEFAULT_FRACTIONS.to_vec(),
            subsamples: pathssl_core::aggregate::DEFAULT_SUBSAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRef {
    pub method: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Probe result documents; defaults to `<reports>/probe/probe_result.json`.
    pub probe: Vec<ResultRef>,
    /// Weak-evaluation documents; defaults to `<reports>/weak-eval/weak_result.json`.
    pub weak: Vec<ResultRef>,
}

impl PipelineConfig {
    /// Reads and strictly validates a config file.
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config file {}: {e}", path.display())))?;
        let value: toml::Table = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {}", path.display(), e.message())))?;
        let unknown = unknown_keys(&toml::Value::Table(value.clone()), &schema());
        if !unknown.is_empty() {
            return Err(ConfigError(format!(
                "{}: unknown configuration keys: {}",
                path.display(),
                unknown.join(", ")
            )));
        }
        let mut cfg: PipelineConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.stores);
        fix(&mut self.paths.reports);
        for p in [
            &mut self.augment.template,
            &mut self.weak.train_labels,
            &mut self.weak.test_labels,
            &mut self.weak.expression,
            &mut self.weak.gene_sets,
            &mut self.weak.survival,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for r in self.report.probe.iter_mut().chain(&mut self.report.weak) {
            fix(&mut r.path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |r: pathssl_core::Result<()>| r.map_err(|e| ConfigError(e.to_string()));
        wrap(self.synth.benchmark.validate())?;
        wrap(self.pathblur.validate())?;
        wrap(self.crops.global.validate())?;
        wrap(self.crops.local.validate())?;
        wrap(self.loss.params.validate())?;
        if !self.augment.jitter.is_valid() {
            return Err(ConfigError("augment.jitter: strengths must be non-negative and hue at most 0.5".into()));
        }
        for (name, p) in [
            ("augment.randstainna_probability", self.augment.randstainna_probability),
            ("augment.jitter_probability", self.augment.jitter_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.rebalance.k == 0 || self.rebalance.total < self.rebalance.k {
            return Err(ConfigError("rebalance: need k >= 1 and total >= k".into()));
        }
        if self.loss.instances == 0 || self.loss.batch < 2 || self.loss.dim == 0 || self.loss.prototypes == 0 {
            return Err(ConfigError("loss: instances, dim and prototypes must be positive and batch at least 2".into()));
        }
        if self.weak.sample_n == 0 || self.weak.bootstrap_replicates == 0 || self.probe.sizes.bootstrap_replicates == 0 {
            return Err(ConfigError("sample and replicate counts must be positive".into()));
        }
        if self.titrate.subsamples == 0 || self.titrate.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(ConfigError("titrate: fractions must lie in (0, 1] and subsamples be positive".into()));
        }
        Ok(())
    }

    /// The config as written to a run directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A config with every optional part present, used as the key schema.
fn schema() -> toml::Value {
    let mut cfg = PipelineConfig {
        master_seed: 0,
        paths: Paths::default(),
        synth: SynthSection::default(),
        embed: EmbedSection::default(),
        augment: AugmentSection::default(),
        pathblur: PathBlurConfig::default(),
        crops: MultiCropConfig::default(),
        rebalance: RebalanceSection::default(),
        loss: LossSection::default(),
        probe: ProbeSection::default(),
        weak: WeakSection::default(),
        titrate: TitrateSection::default(),
        report: ReportSection::default(),
    };
    let p = PathBuf::from("x");
    cfg.augment.template = Some(p.clone());
    cfg.weak.task = Some(String::new());
    cfg.weak.train_labels = Some(p.clone());
    cfg.weak.test_labels = Some(p.clone());
    cfg.weak.expression = Some(p.clone());
    cfg.weak.gene_sets = Some(p.clone());
    cfg.weak.survival = Some(p.clone());
    cfg.titrate.task = Some(String::new());
    cfg.synth.benchmark.tasks.truncate(1);
    cfg.synth.benchmark.tasks[0].distractor = Some(SynthClassParams::default());
    let r = ResultRef {
        method: String::new(),
        path: p,
    };
    cfg.report.probe = vec![r.clone()];
    cfg.report.weak = vec![r];
    toml::Value::try_from(&cfg).expect("schema serializes")
}

/// Dotted paths of keys in `value` that do not exist in `schema`. Array
/// items are checked against the first schema item.
fn unknown_keys(value: &toml::Value, schema: &toml::Value) -> Vec<String> {
    let mut out = BTreeSet::new();
    walk(value, schema, String::new(), &mut out);
    out.into_iter().collect()
}

fn walk(value: &toml::Value, schema: &toml::Value, prefix: String, out: &mut BTreeSet<String>) {
    match (value, schema) {
        (toml::Value::Table(v), toml::Value::Table(s)) => {
            for (k, child) in v {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match s.get(k) {
                    Some(sc) => walk(child, sc, path, out),
                    None => {
                        out.insert(path);
                    }
                }
            }
        }
        (toml::Value::Array(v), toml::Value::Array(s)) => {
            if let Some(item) = s.first() {
                for (i, child) in v.iter().enumerate() {
                    walk(child, item, format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}
