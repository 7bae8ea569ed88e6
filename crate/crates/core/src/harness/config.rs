//! Experiment configuration: TOML loading, defaults and cross-field validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{DataConfig, DatasetKind};
use crate::cluster::{ClusterTopology, LinkModel};
use crate::compute::{Activation, LossKind, Model, ModelKind};
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::replication::{
    Compression, ReplicatorConfig, Scheme, TransferDtype, DEFAULT_CHUNK_SIZE,
};

/// Model section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Quadratic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// MLP only: input, hidden and output widths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Zero-pad the parameter vector to a multiple of the shard count instead
    /// of rejecting an indivisible model.
    #[serde(default)]
    pub pad_to_shards: bool,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

impl ModelSpec {
    pub fn quadratic(dim: usize) -> Self {
        Self {
            kind: ModelKind::Quadratic,
            dim: Some(dim),
            layers: Vec::new(),
            activation: default_activation(),
            loss: LossKind::Mse,
            pad_to_shards: false,
        }
    }

    pub fn mlp(layers: &[usize], activation: Activation, loss: LossKind) -> Self {
        Self {
            kind: ModelKind::Mlp,
            dim: None,
            layers: layers.to_vec(),
            activation,
            loss,
            pad_to_shards: false,
        }
    }

    /// Model before any padding.
    pub fn build(&self) -> Result<Model> {
        match self.kind {
            ModelKind::Quadratic => {
                let dim = self
                    .dim
                    .ok_or_else(|| Error::config("model.dim is required for a quadratic model"))?;
                Model::quadratic(dim)
            }
            ModelKind::Mlp => Model::mlp(&self.layers, self.activation, self.loss),
        }
    }

    /// Model laid out for `shards` parameter shards.
    pub fn build_for(&self, shards: usize) -> Result<Model> {
        let m = self.build()?;
        Ok(if self.pad_to_shards {
            m.padded_to(shards)
        } else {
            m
        })
    }
}

/// Replicator section of the config file. DeMo accepts either `top_k` or
/// `compression`; the other is derived from `chunk_size`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicatorSection {
    pub scheme: Scheme,
    pub chunk_size: usize,
    pub top_k: Option<usize>,
    pub compression: Option<Compression>,
    pub sign: bool,
    pub dtype: TransferDtype,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
}

impl Default for ReplicatorSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Demo,
            chunk_size: DEFAULT_CHUNK_SIZE,
            top_k: None,
            compression: None,
            sign: true,
            dtype: TransferDtype::Fp32,
            seed: None,
        }
    }
}

/// Compression used when the file names neither `top_k` nor `compression`.
pub const DEFAULT_COMPRESSION: (u64, u64) = (1, 16);

impl ReplicatorSection {
    fn resolve(&self, seed: u64, errs: &mut Vec<String>) -> ReplicatorConfig {
        let default_c =
            Compression::new(DEFAULT_COMPRESSION.0, DEFAULT_COMPRESSION.1).expect("valid default");
        let mut rep = match self.scheme {
            Scheme::Demo => {
                let k = match (self.top_k, self.compression) {
                    (Some(k), _) => k,
                    (None, c) => {
                        let c = c.unwrap_or(default_c);
                        let exact =
                            c.ratio() * num_rational::Ratio::from_integer(self.chunk_size as u64);
                        if !exact.is_integer() {
                            errs.push(format!(
                                "replicator.compression {c} times chunk_size {} is not a whole top_k",
                                self.chunk_size
                            ));
                        }
                        exact.to_integer() as usize
                    }
                };
                let rep = ReplicatorConfig::demo(self.chunk_size, k);
                if let (Some(_), Some(c)) = (self.top_k, self.compression) {
                    if c != rep.compression {
                        errs.push(format!(
                            "replicator.compression {c} disagrees with top_k/chunk_size = {k}/{}",
                            self.chunk_size
                        ));
                    }
                }
                rep
            }
            Scheme::Full => {
                let rep = ReplicatorConfig::full();
                if let Some(c) = self.compression {
                    if c != Compression::one() {
                        errs.push(format!("full replication requires compression 1, got {c}"));
                    }
                }
                rep
            }
            scheme => {
                let mut rep =
                    ReplicatorConfig::with_scheme(scheme, self.compression.unwrap_or(default_c));
                rep.chunk_size = self.chunk_size;
                rep
            }
        };
        rep.sign = self.sign;
        rep.dtype = self.dtype;
        rep.seed = self.seed.unwrap_or(seed);
        rep
    }
}

/// Data section: every field may be omitted and is then inferred from the model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: Option<DatasetKind>,
    pub size: Option<usize>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub separation: Option<f64>,
    pub noise: Option<f64>,
}

impl DataSection {
    fn resolve(&self, model: Option<&Model>) -> DataConfig {
        let base = DataConfig::default();
        let inferred_kind = match model {
            Some(m) if m.kind() == ModelKind::Quadratic => DatasetKind::QuadraticTarget,
            Some(m) if m.loss_kind() == LossKind::Mse => DatasetKind::LinearRegression,
            _ => DatasetKind::GaussianBlobs,
        };
        DataConfig {
            kind: self.kind.unwrap_or(inferred_kind),
            size: self.size.unwrap_or(base.size),
            dim: self.dim.or(model.map(Model::input_dim)).unwrap_or(base.dim),
            classes: self
                .classes
                .or(model.map(Model::output_dim))
                .unwrap_or(base.classes),
            separation: self.separation.unwrap_or(base.separation),
            noise: self.noise.unwrap_or(base.noise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    topology: ClusterTopology,
    model: ModelSpec,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    optimizer: OptimizerConfig,
    #[serde(default)]
    replicator: ReplicatorSection,
    #[serde(default)]
    link: LinkModel,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_steps")]
    steps: u64,
    #[serde(default = "default_batch_size")]
    batch_size: usize,
    #[serde(default = "default_eval_every")]
    eval_every: u64,
    #[serde(default)]
    warmup_fraction: f64,
}

fn default_seed() -> u64 {
    0
}

fn default_steps() -> u64 {
    1000
}

fn default_batch_size() -> usize {
    16
}

fn default_eval_every() -> u64 {
    100
}

/// Fully resolved experiment. Construct through [`load_config`],
/// [`parse_config`] or by editing a resolved value and calling [`ExperimentConfig::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub topology: ClusterTopology,
    pub model: ModelSpec,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    pub replicator: ReplicatorConfig,
    pub link: LinkModel,
    pub output: OutputConfig,
    pub seed: u64,
    pub steps: u64,
    /// Examples per accelerator per step.
    pub batch_size: usize,
    pub eval_every: u64,
    pub warmup_fraction: f64,
}

impl ExperimentConfig {
    /// Every violated constraint, across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = self.topology.violations();
        errs.extend(self.link.violations());
        errs.extend(self.optimizer.violations());
        errs.extend(self.data.violations());
        if self.steps < 1 {
            errs.push("steps must be >= 1".into());
        }
        if self.batch_size < 1 {
            errs.push("batch_size must be >= 1".into());
        }
        if self.eval_every < 1 {
            errs.push("eval_every must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            errs.push(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            ));
        }
        let shards = self.topology.shard_count().max(1);
        match self.model.build() {
            Err(Error::Config(v)) => errs.extend(v),
            Err(e) => errs.push(e.to_string()),
            Ok(m) => {
                if !self.model.pad_to_shards && m.param_count() % shards != 0 {
                    errs.push(format!(
                        "param_count {} is not divisible by accels_per_node {} (set model.pad_to_shards = true to pad)",
                        m.param_count(),
                        shards
                    ));
                } else {
                    let shard_len = m.clone().padded_to(shards).param_count() / shards;
                    if !self.optimizer.kind.is_baseline() {
                        errs.extend(self.replicator.violations(shard_len));
                    }
                }
                errs.extend(self.data_model_mismatch(&m));
            }
        }
        let train_size = self.data.size * 4 / 5;
        let need = self.topology.accelerators() * self.batch_size;
        if need > train_size {
            errs.push(format!(
                "{} accelerators x batch_size {} = {need} examples per step exceeds the training split of {train_size}",
                self.topology.accelerators(),
                self.batch_size
            ));
        }
        errs
    }

    fn data_model_mismatch(&self, m: &Model) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.data;
        if d.dim != m.input_dim() {
            errs.push(format!(
                "data.dim {} does not match model input width {}",
                d.dim,
                m.input_dim()
            ));
        }
        let compatible = match d.kind {
            DatasetKind::QuadraticTarget => m.kind() == ModelKind::Quadratic,
            DatasetKind::GaussianBlobs => {
                if m.kind() == ModelKind::Mlp && d.classes != m.output_dim() {
                    errs.push(format!(
                        "data.classes {} does not match model output width {}",
                        d.classes,
                        m.output_dim()
                    ));
                }
                m.kind() == ModelKind::Mlp && m.loss_kind() == LossKind::CrossEntropy
            }
            DatasetKind::LinearRegression => {
                m.kind() == ModelKind::Mlp && m.loss_kind() == LossKind::Mse && m.output_dim() == 1
            }
        };
        if !compatible {
            errs.push(format!(
                "dataset {:?} cannot train model {:?}",
                d.kind, self.model.kind
            ));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// The model as simulated, padded if requested.
    pub fn build_model(&self) -> Result<Model> {
        self.model.build_for(self.topology.shard_count())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and validates config text; all violations are reported together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut errs = Vec::new();
    let replicator = raw.replicator.resolve(raw.seed, &mut errs);
    let model = raw.model.build().ok();
    let cfg = ExperimentConfig {
        topology: raw.topology,
        data: raw.data.resolve(model.as_ref()),
        model: raw.model,
        optimizer: raw.optimizer,
        replicator,
        link: raw.link,
        output: raw.output,
        seed: raw.seed,
        steps: raw.steps,
        batch_size: raw.batch_size,
        eval_every: raw.eval_every,
        warmup_fraction: raw.warmup_fraction,
    };
    errs.extend(cfg.violations());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [topology]
        nodes = 2
        accels_per_node = 2

        [model]
        kind = "mlp"
        layers = [2, 8, 4]
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.replicator.scheme, Scheme::Demo);
        assert_eq!(cfg.replicator.chunk_size, 32);
        assert_eq!(cfg.replicator.dtype, TransferDtype::Fp32);
        assert!(cfg.replicator.sign);
        assert_eq!(cfg.data.kind, DatasetKind::GaussianBlobs);
        assert_eq!((cfg.data.dim, cfg.data.classes), (2, 4));
    }

    #[test]
    fn zero_compression_rejected() {
        let text = format!("{MINIMAL}\n[replicator]\nscheme = \"random\"\ncompression = 0\n");
        assert!(matches!(parse_config(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn indivisible_param_count_names_both_values() {
        let text = MINIMAL.replace("[2, 8, 4]", "[2, 7, 3]");
        let Err(Error::Config(v)) = parse_config(&text) else {
            panic!("expected config error")
        };
        assert!(
            v.iter().any(|m| m.contains("45") && m.contains('2')),
            "{v:?}"
        );
        let padded = text.replace(
            "layers = [2, 7, 3]",
            "layers = [2, 7, 3]\npad_to_shards = true",
        );
        assert!(parse_config(&padded).is_ok());
    }

    #[test]
    fn all_violations_reported_together() {
        let text = format!(
            "steps = 0\nwarmup_fraction = 1.5\n{MINIMAL}\n[optimizer]\nlearning_rate = -1.0\n"
        );
        let Err(Error::Config(v)) = parse_config(&text) else {
            panic!("expected config error")
        };
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn demo_top_k_and_compression_agree() {
        let ok =
            format!("{MINIMAL}\n[replicator]\nchunk_size = 16\ntop_k = 2\ncompression = \"1/8\"\n");
        assert_eq!(parse_config(&ok).unwrap().replicator.top_k, 2);
        let bad = ok.replace("1/8", "1/4");
        assert!(parse_config(&bad).is_err());
        let derived = format!("{MINIMAL}\n[replicator]\ncompression = \"1/4\"\n");
        assert_eq!(parse_config(&derived).unwrap().replicator.top_k, 8);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nsteps_typo = 3\n");
        assert!(parse_config(&text).is_err());
    }
}
