use std::path::{Path, PathBuf};

use epimix_core::combine::CombineConfig;
use epimix_core::evaluation::MaeGranularity;
use epimix_core::hyperfit::{HyperfitConfig, QualityScreen};
use epimix_core::imis::ImisConfig;
use epimix_core::likelihood::RandomEffectPrior;
use epimix_core::model::DemographicSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a run needs besides per-command inputs; loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Hyper JSON; the shipped default weights are used when absent.
    pub hyper: Option<PathBuf>,
    pub use_surveys: bool,
    pub mae_granularity: MaeGranularity,
    pub imis: ImisConfig,
    pub demog: DemographicSchedule,
    pub re_prior: RandomEffectPrior,
    pub combine: CombineConfig,
    pub hyperfit: HyperfitConfig,
    pub screen: QualityScreen,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("out"),
            hyper: None,
            use_surveys: true,
            mae_granularity: MaeGranularity::Year,
            imis: ImisConfig::default(),
            demog: DemographicSchedule::default(),
            re_prior: RandomEffectPrior::default(),
            combine: CombineConfig::default(),
            hyperfit: HyperfitConfig::default(),
            screen: QualityScreen::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(h) = &cfg.hyper {
            // Relative hyper paths are taken relative to the config file.
            if h.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                let mut cfg = cfg.clone();
                cfg.hyper = Some(base.join(h));
                return cfg.validated();
            }
        }
        cfg.validated()
    }

    fn validated(self) -> CliResult<Self> {
        self.imis.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.demog.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(h) = &self.hyper {
            if !h.exists() {
                return Err(CliError::Config(format!("hyper file {} does not exist", h.display())));
            }
        }
        Ok(self)
    }

    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (--seed or `seed` in the config)".into()))
    }
}
