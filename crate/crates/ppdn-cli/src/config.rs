//! TOML experiment configuration.
//!
//! Unknown keys are rejected so typos fail loudly. Every section has
//! defaults, so a minimal config file (or an empty one) runs the stock
//! experiment.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ppdn::network::{Activation, NetworkConfig};
use ppdn::objective::OmegaNormalization;
use ppdn::optimizer::{OptMode, OptimizerConfig};
use ppdn::synth::{FramePolicy, IntensityRamp, SynthConfig};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RampKey {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq, Eq)]
pub enum FramePolicyKey {
    #[serde(rename = "all-nonpeak")]
    AllNonpeak,
    #[serde(rename = "from-frame-7")]
    FromFrame7,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKey {
    BaselineNoPairs,
    Sgd,
    Pgs,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKey {
    Concat,
    PerLayer,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_subjects: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub frames_per_sequence: usize,
    pub noise_sigma: f64,
    pub subject_offset_sigma: f64,
    pub seed: u64,
    pub ramp: RampKey,
    pub frame_policy: FramePolicyKey,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            num_subjects: 24,
            num_classes: 6,
            input_dim: 16,
            frames_per_sequence: 12,
            noise_sigma: 0.12,
            subject_offset_sigma: 0.35,
            seed: 7,
            ramp: RampKey::Linear,
            frame_policy: FramePolicyKey::FromFrame7,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: String,
    pub omega_layers: BTreeSet<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            input_dim: 16,
            hidden_dims: vec![64, 32],
            num_classes: 6,
            activation: "relu".into(),
            omega_layers: [0, 1].into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub lambda: f64,
    pub omega_normalization: NormalizationKey,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            lambda: 0.0002,
            omega_normalization: NormalizationKey::Concat,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub mode: ModeKey,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            mode: ModeKey::Pgs,
            learning_rate: 0.05,
            iterations: 2000,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k_folds: usize,
    pub seeds: Vec<u64>,
    /// Modes entering `compare`.
    pub modes: Vec<ModeKey>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k_folds: 10,
            seeds: vec![0, 1, 2, 3, 4],
            modes: vec![ModeKey::BaselineNoPairs, ModeKey::Sgd, ModeKey::Pgs],
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: Option<String>,
    pub synth: SynthSection,
    pub network: NetworkSection,
    pub objective: ObjectiveSection,
    pub optimizer: OptimizerSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.network.input_dim != self.synth.input_dim {
            return Err(CliError::Config(format!(
                "network.input_dim {} != synth.input_dim {}",
                self.network.input_dim, self.synth.input_dim
            )));
        }
        if self.network.num_classes != self.synth.num_classes {
            return Err(CliError::Config(format!(
                "network.num_classes {} != synth.num_classes {}",
                self.network.num_classes, self.synth.num_classes
            )));
        }
        if self.network.activation != "relu" {
            return Err(CliError::Config(format!(
                "unsupported activation {:?}",
                self.network.activation
            )));
        }
        if self.eval.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds must be non-empty".into()));
        }
        self.synth_config()
            .validate()
            .and_then(|_| self.network_config().validate())
            .and_then(|_| self.optimizer_config(OptMode::Sgd, 0).validate())
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> [u8; 32] {
        let text = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.finalize().into()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_subjects: self.synth.num_subjects,
            num_classes: self.synth.num_classes,
            input_dim: self.synth.input_dim,
            frames_per_sequence: self.synth.frames_per_sequence,
            noise_sigma: self.synth.noise_sigma,
            subject_offset_sigma: self.synth.subject_offset_sigma,
            seed: self.synth.seed,
            ramp: match self.synth.ramp {
                RampKey::Linear => IntensityRamp::Linear,
                RampKey::Sigmoid => IntensityRamp::Sigmoid,
            },
        }
    }

    pub fn frame_policy(&self) -> FramePolicy {
        match self.synth.frame_policy {
            FramePolicyKey::AllNonpeak => FramePolicy::AllNonpeak,
            FramePolicyKey::FromFrame7 => FramePolicy::FromFrame7,
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            input_dim: self.network.input_dim,
            hidden_dims: self.network.hidden_dims.clone(),
            num_classes: self.network.num_classes,
            activation: Activation::Relu,
            omega_layers: self.network.omega_layers.clone(),
        }
    }

    pub fn normalization(&self) -> OmegaNormalization {
        match self.objective.omega_normalization {
            NormalizationKey::Concat => OmegaNormalization::Concat,
            NormalizationKey::PerLayer => OmegaNormalization::PerLayer,
        }
    }

    pub fn optimizer_config(&self, mode: OptMode, _seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.optimizer.learning_rate,
            lambda: self.objective.lambda,
            mode,
            iterations: self.optimizer.iterations,
            batch_size: self.optimizer.batch_size,
        }
    }

    /// The optimizer mode named in `[optimizer]`, for single-run training.
    pub fn train_mode(&self) -> Result<OptMode, CliError> {
        match self.optimizer.mode {
            ModeKey::Sgd => Ok(OptMode::Sgd),
            ModeKey::Pgs => Ok(OptMode::Pgs),
            ModeKey::BaselineNoPairs => Err(CliError::Config(
                "optimizer.mode baseline-no-pairs is only valid inside compare; use sgd or pgs"
                    .into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("[synth]\nnum_subjets = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn cross_field_mismatch_is_rejected() {
        let config: ExperimentConfig =
            toml::from_str("[network]\ninput_dim = 4\n").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.objective.lambda = 0.5;
        assert_ne!(a.hash(), b.hash());
    }
}
