use std::path::{Path, PathBuf};

use decnn::data_io::SyntheticConfig;
use decnn::robustness::CorruptionKind;
use decnn::training::{PretrainConfig, TrainConfig};
use decnn::uncertainty::SamplerKind;
use decnn::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "DECNN_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Accuracy,
    Misclassification,
    Ood,
    Calibration,
    Fairness,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Misclassification => "misclassification",
            Self::Ood => "ood",
            Self::Calibration => "calibration",
            Self::Fairness => "fairness",
        }
    }
}

/// Where the `ood` experiment draws its outliers from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodSource {
    /// FashionMNIST test images under `<root>/fashion`.
    Fashion,
    /// FGSM perturbations of the inlier test set.
    Fgsm,
    /// The test examples of `data.hold_out_class`.
    Heldout,
    /// Every entry of `eval.corruptions`, one report row each.
    Corruptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

/// What the auxiliary pretrained network predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainTarget {
    Labels,
    Protected,
    /// The spurious cue side of the synthetic set.
    Cue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Dataset root holding `mnist/` and `fashion/`; falls back to `DECNN_DATA_DIR`.
    pub root: Option<PathBuf>,
    pub train_examples: Option<usize>,
    pub test_examples: Option<usize>,
    /// Digit removed from training and used as outliers by the `ood` experiment.
    pub hold_out_class: Option<usize>,
    pub synthetic: SyntheticConfig,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            root: None,
            train_examples: Some(10_000),
            test_examples: None,
            hold_out_class: None,
            synthetic: SyntheticConfig::default(),
            synthetic_train: 4000,
            synthetic_test: 4000,
            data_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainedSection {
    pub target: PretrainTarget,
    #[serde(flatten)]
    pub config: PretrainConfig,
}

impl Default for PretrainedSection {
    fn default() -> Self {
        Self {
            target: PretrainTarget::Labels,
            config: PretrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub experiment: Option<Experiment>,
    pub ood_source: Option<OodSource>,
    pub sampler: SamplerKind,
    pub samples: usize,
    /// Recursion depth for path sampling; defaults to the training depth.
    pub depth: Option<usize>,
    pub dropout_p: f64,
    pub sampler_seed: u64,
    /// Test examples scored by sampling-based experiments (all if unset).
    pub eval_examples: Option<usize>,
    pub ece_bins: usize,
    pub fgsm_epsilon: f64,
    pub corruptions: Vec<CorruptionKind>,
    pub corruption_seed: u64,
    pub probe_examples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            ood_source: None,
            sampler: SamplerKind::RedecnnPaths,
            samples: 30,
            depth: None,
            dropout_p: 0.5,
            sampler_seed: 0,
            eval_examples: None,
            ece_bins: 10,
            fgsm_epsilon: 0.1,
            corruptions: CorruptionKind::default_suite(),
            corruption_seed: 0,
            probe_examples: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub pretrained: PretrainedSection,
    pub eval: EvalConfig,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| config_err("train", e.to_string()))?;
        if self.data.dataset == DatasetKind::Synthetic {
            let side = self.data.synthetic.side;
            if self.train.arch.input_dim != side * side || self.train.arch.classes != 2 {
                return Err(config_err(
                    "train.arch",
                    format!("synthetic data needs input_dim = {} and classes = 2", side * side),
                ));
            }
        }
        if self.pretrained.target == PretrainTarget::Cue && self.data.dataset != DatasetKind::Synthetic {
            return Err(config_err("pretrained.target", "cue targets need data.dataset = synthetic"));
        }
        if self.eval.samples < 1 {
            return Err(config_err("eval.samples", "must be >= 1"));
        }
        if self.eval.ece_bins < 1 {
            return Err(config_err("eval.ece_bins", "must be >= 1"));
        }
        if !(self.eval.fgsm_epsilon >= 0.0) {
            return Err(config_err("eval.fgsm_epsilon", "must be >= 0"));
        }
        if let Some(c) = self.data.hold_out_class {
            if c >= self.train.arch.classes {
                return Err(config_err("data.hold_out_class", "outside the class range"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn data_root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.data.root {
            return Ok(r.clone());
        }
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| config_err("data.root", format!("unset and {DATA_DIR_ENV} is not defined")))
    }

    pub fn sampler_depth(&self) -> usize {
        self.eval.depth.unwrap_or(self.train.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::parse("{}").unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let err = RunConfig::parse(r#"{"train": {"arch": {"blokcs": 3}}}"#).unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "train.arch.blokcs");
                assert!(message.contains("unknown field"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            RunConfig::parse(r#"{"train": {"batch_size": 0}}"#),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            RunConfig::parse(r#"{"data": {"dataset": "synthetic"}}"#),
            Err(Error::Config { path, .. }) if path == "train.arch"
        ));
        assert!(matches!(
            RunConfig::parse(r#"{"eval": {"experiment": "speed"}}"#),
            Err(Error::Config { path, .. }) if path == "eval.experiment"
        ));
        assert!(matches!(
            RunConfig::parse(r#"{"pretrained": {"target": "cue"}}"#),
            Err(Error::Config { path, .. }) if path == "pretrained.target"
        ));
    }

    #[test]
    fn corruption_suite_parses() {
        let c = RunConfig::parse(
            r#"{"eval": {"corruptions": [{"kind": "rotate", "degrees": 45.0}, {"kind": "stripe", "rows": 2}]}}"#,
        )
        .unwrap();
        assert_eq!(c.eval.corruptions.len(), 2);
    }
}
