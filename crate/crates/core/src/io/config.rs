use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SyntheticSpec;
use crate::engine::{Activation, Hyperparams, MeasurementMode, Optimizer};
use crate::error::{Error, Result};
use crate::sampler::{AnchorSampling, SamplerConfig, ScoreMode};
use crate::tasks::DEFAULT_MARGIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TaskKind {
    #[default]
    #[serde(rename = "node-class")]
    NodeClass,
    #[serde(rename = "link-pred")]
    LinkPred,
}

/// Everything a reproducible run needs. Every field has a default, so a
/// config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskKind,
    pub layers: usize,
    /// Measurement count `M`.
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lr_theta: f64,
    pub lr_u: f64,
    pub lr_h: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub score_mode: ScoreMode,
    pub anchors: AnchorSampling,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub measurement: MeasurementMode,
    pub gamma: f64,
    pub hits_k: usize,
    pub output_dir: PathBuf,
    /// Dataset directory; takes precedence over `synthetic`.
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub heatmap: bool,
    pub ripcheck: bool,
    pub rip_k: usize,
    pub rip_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self {
            task: TaskKind::NodeClass,
            layers: h.layers,
            m: 128,
            alpha: h.alpha,
            beta: h.beta,
            lambda: h.lambda,
            lr_theta: h.lr_theta,
            lr_u: h.lr_u,
            lr_h: h.lr_h,
            epochs: h.epochs,
            patience: h.patience,
            seed: 0,
            score_mode: ScoreMode::default(),
            anchors: AnchorSampling::default(),
            activation: h.activation,
            optimizer: h.optimizer,
            measurement: h.measurement,
            gamma: DEFAULT_MARGIN,
            hits_k: 10,
            output_dir: PathBuf::from("out"),
            dataset: None,
            synthetic: None,
            heatmap: false,
            ripcheck: false,
            rip_k: 4,
            rip_trials: 500,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            lr_theta: self.lr_theta,
            lr_u: self.lr_u,
            lr_h: self.lr_h,
            epochs: self.epochs,
            layers: self.layers,
            activation: self.activation,
            optimizer: self.optimizer,
            measurement: self.measurement,
            patience: self.patience,
            plateau_tol: Hyperparams::default().plateau_tol,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            m: self.m,
            mode: self.score_mode,
            anchors: self.anchors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        if self.m == 0 {
            return Err(Error::InvalidParams("m must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "gamma {} must be nonnegative",
                self.gamma
            )));
        }
        if self.hits_k == 0 || self.patience == 0 {
            return Err(Error::InvalidParams("hits_k and patience must be positive".into()));
        }
        if self.ripcheck && (self.rip_k == 0 || self.rip_trials == 0) {
            return Err(Error::InvalidParams("rip_k and rip_trials must be positive".into()));
        }
        if self.dataset.is_none() && self.synthetic.is_none() {
            return Err(Error::InvalidParams(
                "config needs a `dataset` directory or a `synthetic` spec".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_keys() {
        let cfg = RunConfig::default();
        assert_eq!((cfg.layers, cfg.m, cfg.epochs), (2, 128, 200));
        assert_eq!((cfg.lr_theta, cfg.lambda, cfg.gamma), (0.01, 1e-3, 0.5));
        let json = serde_json::to_value(&cfg).unwrap();
        for key in [
            "task",
            "layers",
            "m",
            "alpha",
            "beta",
            "lambda",
            "lr_theta",
            "lr_u",
            "lr_h",
            "epochs",
            "seed",
            "score_mode",
            "activation",
            "optimizer",
            "gamma",
            "output_dir",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["task"], "node-class");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"task":"link-pred","m":16,"synthetic":{"kind":"erdos-renyi","n":30,"p":0.2}}"#)
                .unwrap();
        assert_eq!(cfg.task, TaskKind::LinkPred);
        assert_eq!(cfg.alpha, 1.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"learning_rate":1}"#).is_err());
        let cfg = RunConfig {
            lr_u: -1.0,
            dataset: Some("x".into()),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidParams(_))));
        assert!(RunConfig::default().validate().is_err());
    }
}
