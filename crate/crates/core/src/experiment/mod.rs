//! Data bundles, model presets and the experiment drivers behind the CLI.

mod grid;
mod linear;

pub use grid::{reproduce, train_to_dir, ExperimentPlan, PlannedRun, RunOutcome, Scale, Summary};
pub use linear::{pca_check, PcaCheck, PcaRow};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_dataset, Dataset};
use crate::error::{config_err, Error, Result};
use crate::model::ModelConfig;
use crate::system::{build_system, SystemKind, SystemOptions, SystemSpec};

pub const SYSTEM_FILE: &str = "system.json";
pub const TRAIN_FILE: &str = "data.fed";
pub const EVAL_FILE: &str = "eval.fed";

/// A system together with a training set and a disjoint held-out set.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub spec: SystemSpec,
    pub train: Dataset,
    pub eval: Dataset,
}

impl DataBundle {
    /// The system is drawn from `seed`; training and held-out samples use
    /// the next two seeds.
    pub fn generate(seed: u64, opts: &SystemOptions, n: usize, n_eval: usize) -> Result<Self> {
        let spec = build_system(seed, opts)?;
        let train = sample_dataset(&spec, n, seed.wrapping_add(1))?;
        let eval = sample_dataset(&spec, n_eval, seed.wrapping_add(2))?;
        Ok(Self { spec, train, eval })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SYSTEM_FILE), self.spec.to_json()?)?;
        self.train.save(&dir.join(TRAIN_FILE))?;
        self.eval.save(&dir.join(EVAL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec = SystemSpec::from_json(&std::fs::read_to_string(dir.join(SYSTEM_FILE))?)?;
        let train = Dataset::load_for(&dir.join(TRAIN_FILE), &spec)?;
        let eval = Dataset::load_for(&dir.join(EVAL_FILE), &spec)?;
        Ok(Self { spec, train, eval })
    }

    pub fn digest(&self) -> String {
        self.spec.digest()
    }
}

/// Default sizes of the standard systems: 5 factors and 48 outputs, or 3 and 10.
pub fn default_shape(kind: SystemKind) -> (usize, usize) {
    match kind {
        SystemKind::Nonlinear => (5, 48),
        SystemKind::Linear => (3, 10),
    }
}

/// Architectures compared in the reconstruction table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Fe,
    Vae,
    BetaVae,
    BetaFe,
    SupervisedFe,
}

/// Default beta of the beta-weighted kinds.
pub const DEFAULT_BETA_HEAVY: f64 = 4.0;

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Fe, ModelKind::Vae, ModelKind::BetaVae, ModelKind::BetaFe, ModelKind::SupervisedFe];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fe => "fe",
            ModelKind::Vae => "vae",
            ModelKind::BetaVae => "beta-vae",
            ModelKind::BetaFe => "beta-fe",
            ModelKind::SupervisedFe => "supervised-fe",
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            ModelKind::BetaVae | ModelKind::BetaFe => DEFAULT_BETA_HEAVY,
            _ => 1.0,
        }
    }

    /// Model configuration for a system with `n_observed` outputs and `n_factors` factors.
    pub fn config(self, n_latents: usize, beta: Option<f64>, n_observed: usize, n_factors: usize) -> ModelConfig {
        let base = match self {
            ModelKind::Vae | ModelKind::BetaVae => ModelConfig::vae(n_latents),
            _ => ModelConfig::fe(n_latents),
        };
        ModelConfig {
            n_observed,
            beta: beta.unwrap_or(self.default_beta()),
            supervised: self == ModelKind::SupervisedFe,
            label_dim: n_factors,
            ..base
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown model kind {s:?} (expected fe, vae, beta-vae, beta-fe or supervised-fe)"))
        })
    }
}

/// Everything that selects one training run. Unset fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub model: ModelKind,
    pub latents: usize,
    pub beta: Option<f64>,
    pub xi: f64,
    pub alpha: f64,
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_every: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::Fe,
            latents: 6,
            beta: None,
            xi: 1.0,
            alpha: 2.0 / 3.0,
            iters: 20000,
            batch: 500,
            lr: 1e-3,
            seed: 0,
            eval_every: 500,
        }
    }
}

impl TrainSettings {
    pub fn model_config(&self, spec: &SystemSpec) -> ModelConfig {
        ModelConfig {
            xi: self.xi,
            alpha: self.alpha,
            ..self.model.config(self.latents, self.beta, spec.n_outputs, spec.n_inputs)
        }
    }

    pub fn train_config(&self, data: &Dataset) -> crate::train::TrainConfig {
        crate::train::TrainConfig {
            iterations: self.iters,
            batch_size: self.batch,
            lr: self.lr,
            dataset_size: data.len(),
            seed: self.seed,
            eval_every: self.eval_every,
            checkpoint_path: None,
        }
    }

    /// Reject combinations the dataset cannot support.
    pub fn check_against(&self, bundle: &DataBundle) -> Result<()> {
        if self.model == ModelKind::SupervisedFe && !bundle.train.has_factors() {
            return config_err("supervised-fe needs a dataset with generative factors");
        }
        let cfg = self.model_config(&bundle.spec);
        cfg.validate()?;
        self.train_config(&bundle.train).validate()
    }
}

/// Written next to every checkpoint so later commands can check data compatibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub settings: TrainSettings,
    pub model: ModelConfig,
    pub config_digest: String,
    pub system_digest: String,
}

pub const MANIFEST_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "ckpt.fec";
pub const HISTORY_FILE: &str = "history.csv";

impl RunManifest {
    pub fn load_beside(ckpt: &Path) -> Result<Option<Self>> {
        let path = ckpt.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("gan".parse::<ModelKind>().is_err());
    }

    #[test]
    fn kind_configs() {
        let c = ModelKind::BetaFe.config(6, None, 48, 5);
        assert_eq!((c.beta, c.baseline_vae, c.supervised), (4.0, false, false));
        let c = ModelKind::BetaVae.config(6, Some(2.0), 48, 5);
        assert_eq!((c.beta, c.baseline_vae), (2.0, true));
        let c = ModelKind::SupervisedFe.config(6, None, 48, 5);
        assert!(c.supervised && c.label_dim == 5 && c.beta == 1.0);
        for k in ModelKind::ALL {
            k.config(6, None, 48, 5).validate().unwrap();
        }
    }

    #[test]
    fn settings_from_partial_json() {
        let s: TrainSettings = serde_json::from_str(r#"{"model": "beta-fe", "iters": 10}"#).unwrap();
        assert_eq!(s.model, ModelKind::BetaFe);
        assert_eq!(s.iters, 10);
        assert_eq!(s.batch, 500);
        assert!(serde_json::from_str::<TrainSettings>(r#"{"iterz": 10}"#).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = DataBundle::generate(3, &SystemOptions::default(), 50, 20).unwrap();
        b.save(dir.path()).unwrap();
        let c = DataBundle::load(dir.path()).unwrap();
        assert_eq!(b.spec, c.spec);
        assert_eq!(b.train, c.train);
        assert_eq!(b.eval, c.eval);
        assert_ne!(b.train.x.row(0), b.eval.x.row(0));
    }
}
