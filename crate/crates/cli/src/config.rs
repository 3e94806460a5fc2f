//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use postocr::copynet::{ModelConfig, TrainConfig};
use postocr::distort::{DEFAULT_ALPHA, DEFAULT_BIN_WIDTH};
use postocr::nnet::INIT_SCALE;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Fraction of lines assigned to training by `prepare`.
    pub split: f64,
    /// Bundled alphabet name or path to an alphabet file.
    pub alphabet: String,
    pub paths: Paths,
    pub bpe: BpeSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub distort: DistortSection,
    pub ocr: OcrSection,
    pub metrics: MetricsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: 0.8,
            alphabet: "iast".into(),
            paths: Paths::default(),
            bpe: BpeSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            distort: DistortSection::default(),
            ocr: OcrSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

/// Artifact locations. Everything except `work_dir` is relative to
/// `work_dir` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub work_dir: PathBuf,
    pub images: PathBuf,
    pub configs: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    pub manifests: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work_dir: "work".into(),
            images: "images".into(),
            configs: "configs".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
            manifests: "manifests".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeSection {
    pub min_count: u64,
    pub max_token_len: usize,
}

impl Default for BpeSection {
    fn default() -> Self {
        Self {
            min_count: 30,
            max_token_len: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub residual: bool,
    pub copy: bool,
    pub beam_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            embed_dim: m.embed_dim,
            hidden: m.hidden,
            layers: m.layers,
            residual: m.residual,
            copy: m.copy,
            beam_width: 1,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            layers: self.layers,
            residual: self.residual,
            copy: self.copy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub init_scale: f64,
    pub max_len: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            init_scale: INIT_SCALE,
            max_len: t.max_len,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            seed,
            max_len: self.max_len,
            class_weights: None,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortSection {
    /// Levels kept per grid axis; 0 keeps the full grid.
    pub grid_levels: usize,
    /// Evaluate this many random grid configurations instead of a grid.
    pub random_subset: usize,
    /// Number of sample lines rendered for config selection.
    pub sample_size: usize,
    /// Configurations kept by `select-configs`.
    pub top_k: usize,
    pub bin_width: f64,
    pub alpha: f64,
    /// External renderer template with `{input}` and `{output}`; the
    /// built-in bitmap font is used when empty.
    pub render_command: String,
}

impl Default for DistortSection {
    fn default() -> Self {
        Self {
            grid_levels: 0,
            random_subset: 0,
            sample_size: 100,
            top_k: 7,
            bin_width: DEFAULT_BIN_WIDTH,
            alpha: DEFAULT_ALPHA,
            render_command: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcrSection {
    /// External engine template with one `{input}`; takes precedence over
    /// the channel.
    pub command: String,
    /// Channel profile file; the bundled profile when empty.
    pub channel_profile: String,
    pub jobs: usize,
}

impl Default for OcrSection {
    fn default() -> Self {
        Self {
            command: String::new(),
            channel_profile: String::new(),
            jobs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub bucket_width: usize,
    pub bucket_min_count: usize,
    pub lm_order: usize,
    pub lm_alpha: f64,
    pub unigram_alpha: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            bucket_width: 10,
            bucket_min_count: 5,
            lm_order: 5,
            lm_alpha: 0.1,
            unigram_alpha: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            bail!("split must lie strictly between 0 and 1, got {}", self.split);
        }
        if self.bpe.min_count == 0 || self.bpe.max_token_len == 0 {
            bail!("bpe.min_count and bpe.max_token_len must be positive");
        }
        if self.model.beam_width == 0 {
            bail!("model.beam_width must be positive");
        }
        Ok(())
    }

    /// Canonical TOML, used for the configuration hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", postocr::bpe::fnv1a64(self.to_toml().as_bytes()))
    }

    pub fn work(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.paths.work_dir.join(rel)
    }

    fn under_work(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.paths.work_dir.join(p)
        }
    }

    pub fn images_dir(&self) -> PathBuf {
        self.under_work(&self.paths.images)
    }

    pub fn configs_dir(&self) -> PathBuf {
        self.under_work(&self.paths.configs)
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.under_work(&self.paths.checkpoints)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.under_work(&self.paths.reports)
    }

    pub fn manifests_dir(&self) -> PathBuf {
        self.under_work(&self.paths.manifests)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.split, 0.8);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: PipelineConfig = toml::from_str("seed = 5\n[model]\nhidden = 64\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.model.hidden, 64);
        assert_eq!(c.model.layers, 3);
    }

    #[test]
    fn invalid_split_is_rejected() {
        let c = PipelineConfig {
            split: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(toml::from_str::<PipelineConfig>("unknown = 1").is_err());
    }
}
