//! Run configuration: one JSON file holds every knob the pipeline reads.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{FitConfig, ModelVariant};
use crate::dataset::SplitMode;
use crate::error::{Error, Result};
use crate::nar::NarConfig;
use crate::pinn::PinnConfig;
use crate::quadrature::BetaSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_csv: PathBuf,
    pub out_dir: PathBuf,
    pub variant: ModelVariant,
    pub quadrature_m: usize,
    /// Tensor-product scenarios instead of the default comonotone pairing.
    pub tensor_grid: bool,
    pub k_contact: f64,
    pub beta1: BetaSpec,
    pub beta2: BetaSpec,
    pub population_shares: Vec<f64>,
    pub fit: FitConfig,
    pub augment_h: f64,
    pub pinn: PinnConfig,
    pub nar: NarConfig,
    /// Collocate the physics loss on the full calibrated window (h grid)
    /// rather than only on the training samples; this is what lets the
    /// network carry the dynamics into the forecast region.
    pub pinn_collocation_full: bool,
    pub split_mode: SplitMode,
    pub seed: u64,
    pub train_synthetic: bool,
    pub train_real: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_csv: PathBuf::from("data/sample_cases.csv"),
            out_dir: PathBuf::from("out"),
            variant: ModelVariant::Siar,
            quadrature_m: 5,
            tensor_grid: false,
            k_contact: 0.1,
            beta1: BetaSpec {
                alpha: 2.1,
                beta: 5.1,
            },
            beta2: BetaSpec {
                alpha: 1.8,
                beta: 3.9,
            },
            population_shares: crate::synthgen::sample_shares(),
            fit: FitConfig::default(),
            augment_h: 0.2,
            pinn: PinnConfig::default(),
            nar: NarConfig::default(),
            pinn_collocation_full: true,
            split_mode: SplitMode::ShortTerm,
            seed: 42,
            train_synthetic: true,
            train_real: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&body)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.quadrature_m == 0 {
            return Err(Error::Config("quadrature_m must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.k_contact) {
            return Err(Error::Config(format!(
                "k_contact {} outside [0,1]",
                self.k_contact
            )));
        }
        if self.augment_h <= 0.0 {
            return Err(Error::Config("augment_h must be positive".into()));
        }
        self.fit.validate()?;
        self.pinn.validate()?;
        let share_sum: f64 = self.population_shares.iter().sum();
        if self.variant == ModelVariant::SiarAged
            && ((share_sum - 1.0).abs() > 1e-6 || self.population_shares.len() != 6)
        {
            return Err(Error::Config(format!(
                "population_shares must be six values summing to 1, got sum {share_sum}"
            )));
        }
        Ok(())
    }
}
