//! Run configuration files.
//!
//! A run is described by one flat JSON object. Every key is optional;
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, MixtureSpec, SmileParams};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelKind, KernelMix, SelectionMode};
use crate::losses::{GpTarget, LossKind, MmdEstimator};
use crate::nn::{Architecture, BatchNormConfig};
use crate::train::{BatchMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Gaussian,
    Laplacian,
    RbfMixture,
    Exponential,
    Matern32,
    Matern52,
    /// All six kernels, combined by `kernel_mode`.
    Mix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub loss: LossKind,
    pub kernel: KernelChoice,
    pub kernel_mode: SelectionMode,
    pub gaussian_sigma: f64,
    pub laplacian_sigma: f64,
    pub rbf_sigmas: Vec<f64>,
    pub exponential_sigma: f64,
    pub matern_alpha: f64,
    pub matern_length: f64,
    pub architecture: Architecture,
    pub lambda: f64,
    pub learning_rate: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    /// Train on the whole training set each step, ignoring `batch_size`.
    pub full_batch: bool,
    pub iterations: u64,
    pub gp_target: GpTarget,
    pub mmd_estimator: MmdEstimator,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub train_size: usize,
    pub eval_samples: usize,
    pub noise_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub record_wall_time: bool,
    pub output_dir: PathBuf,
    pub ring_std: f64,
    pub grid_std: f64,
    pub smile_eye_weight: f64,
    pub smile_eye_variance: f64,
    pub smile_mouth_center_y: f64,
    pub smile_mouth_semi_x: f64,
    pub smile_mouth_semi_y: f64,
    pub smile_mouth_jitter: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let smile = SmileParams::default();
        RunConfig {
            dataset: DatasetKind::Ring,
            loss: t.loss,
            kernel: KernelChoice::Gaussian,
            kernel_mode: SelectionMode::Soft,
            gaussian_sigma: 10.0,
            laplacian_sigma: 100.0,
            rbf_sigmas: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            exponential_sigma: 10.0,
            matern_alpha: 1.0,
            matern_length: 10.0,
            architecture: t.architecture,
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            n_critic: t.n_critic,
            batch_size: 64,
            full_batch: true,
            iterations: t.iterations,
            gp_target: t.gp_target,
            mmd_estimator: t.mmd_estimator,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
            train_size: t.train_size,
            eval_samples: t.eval_samples,
            noise_dim: t.noise_dim,
            bn_eps: t.bn.eps,
            bn_momentum: t.bn.momentum,
            rmsprop_decay: t.rmsprop_decay,
            rmsprop_eps: t.rmsprop_eps,
            record_wall_time: false,
            output_dir: PathBuf::from("runs/default"),
            ring_std: 1e-4,
            grid_std: 0.005,
            smile_eye_weight: smile.eye_weight,
            smile_eye_variance: smile.eye_variance,
            smile_mouth_center_y: smile.mouth_center_y,
            smile_mouth_semi_x: smile.mouth_semi_x,
            smile_mouth_semi_y: smile.mouth_semi_y,
            smile_mouth_jitter: smile.mouth_jitter,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pretty JSON with every field present.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn kernel_kind(&self, choice: KernelChoice) -> Result<KernelKind> {
        match choice {
            KernelChoice::Gaussian => KernelKind::gaussian(self.gaussian_sigma),
            KernelChoice::Laplacian => KernelKind::laplacian(self.laplacian_sigma),
            KernelChoice::RbfMixture => KernelKind::rbf_mixture(self.rbf_sigmas.clone()),
            KernelChoice::Exponential => KernelKind::exponential(self.exponential_sigma),
            KernelChoice::Matern32 => KernelKind::matern32(self.matern_alpha, self.matern_length),
            KernelChoice::Matern52 => KernelKind::matern52(self.matern_alpha, self.matern_length),
            KernelChoice::Mix => unreachable!("a mix is not a single kernel"),
        }
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Ok(match self.kernel {
            KernelChoice::Mix => {
                let parts = [
                    KernelChoice::Gaussian,
                    KernelChoice::Laplacian,
                    KernelChoice::RbfMixture,
                    KernelChoice::Exponential,
                    KernelChoice::Matern32,
                    KernelChoice::Matern52,
                ]
                .into_iter()
                .map(|c| self.kernel_kind(c))
                .collect::<Result<Vec<_>>>()?;
                Kernel::Mix(KernelMix::new(parts, self.kernel_mode)?)
            }
            single => Kernel::Single(self.kernel_kind(single)?),
        })
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        match self.dataset {
            DatasetKind::Ring => MixtureSpec::ring(self.ring_std),
            DatasetKind::Grid => MixtureSpec::grid(self.grid_std),
            DatasetKind::Smile => MixtureSpec::smile(SmileParams {
                eye_weight: self.smile_eye_weight,
                eye_variance: self.smile_eye_variance,
                mouth_center_y: self.smile_mouth_center_y,
                mouth_semi_x: self.smile_mouth_semi_x,
                mouth_semi_y: self.smile_mouth_semi_y,
                mouth_jitter: self.smile_mouth_jitter,
            }),
        }
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            loss: self.loss,
            kernel: self.kernel()?,
            architecture: self.architecture,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            n_critic: self.n_critic,
            batch: if self.full_batch {
                BatchMode::Full
            } else {
                BatchMode::Minibatch(self.batch_size)
            },
            iterations: self.iterations,
            gp_target: self.gp_target,
            mmd_estimator: self.mmd_estimator,
            eval_every: self.eval_every,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
            train_size: self.train_size,
            eval_samples: self.eval_samples,
            noise_dim: self.noise_dim,
            bn: BatchNormConfig {
                eps: self.bn_eps,
                momentum: self.bn_momentum,
            },
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_eps: self.rmsprop_eps,
            record_wall_time: self.record_wall_time,
        };
        config.validate()?;
        Ok(config)
    }

    /// Validates everything and returns the trainer inputs.
    pub fn resolve(&self) -> Result<(TrainConfig, MixtureSpec)> {
        Ok((self.train_config()?, self.mixture()?))
    }
}
