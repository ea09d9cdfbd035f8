//! Installation configuration file.
//!
//! ```toml
//! store_dir = "data"
//! layout = "layout.toml"          # optional, default gojūon board
//! calibration = "calibration.toml" # optional, default two-camera rig
//! dictionary = "words.txt"        # optional, built-in word list
//! label_origin = "face_center"
//!
//! [normalization]
//! [drivers]
//! [game]
//! [eyetracker]                    # optional synthetic tracker
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::board_geometry::{BoardLayout, Calibration};
use crate::capture::{DriverConfig, LabelOrigin};
use crate::dictionary::{load_dictionary, Dictionary};
use crate::engine::GameConfig;
use crate::normalization::NormalizationParams;
use crate::runtime::Installation;
use crate::sim::EyeTrackerModel;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub store_dir: PathBuf,
    pub layout: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub label_origin: LabelOrigin,
    pub normalization: NormalizationParams,
    pub drivers: DriverConfig,
    pub game: GameConfig,
    pub eyetracker: Option<EyeTrackerModel>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            store_dir: PathBuf::from("data"),
            layout: None,
            calibration: None,
            dictionary: None,
            label_origin: LabelOrigin::default(),
            normalization: NormalizationParams::default(),
            drivers: DriverConfig::default(),
            game: GameConfig::default(),
            eyetracker: None,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
}

fn invalid(path: &Path, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { path: path.to_owned(), message: message.to_string() }
}

impl AppConfig {
    /// Reads the file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(&read(path)?).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.store_dir);
        for p in [&mut cfg.layout, &mut cfg.calibration, &mut cfg.dictionary].into_iter().flatten() {
            fix(p);
        }
        cfg.game.validate().map_err(|e| invalid(path, e))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn installation(&self) -> Result<Installation, ConfigError> {
        let layout = match &self.layout {
            Some(p) => BoardLayout::from_toml_str(&read(p)?).map_err(|e| invalid(p, e))?,
            None => BoardLayout::gojuon(),
        };
        let calibration = match &self.calibration {
            Some(p) => Calibration::from_toml_str(&read(p)?).map_err(|e| invalid(p, e))?,
            None => Calibration::default_installation(),
        };
        let dictionary = match &self.dictionary {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
                let report = load_dictionary(&bytes).map_err(|e| invalid(p, e))?;
                if report.rejected > 0 {
                    tracing::warn!(path = %p.display(), rejected = report.rejected, "dictionary lines rejected");
                }
                report.dictionary
            }
            None => Dictionary::builtin(),
        };
        Ok(Installation {
            layout,
            dictionary,
            calibration,
            normalization: self.normalization,
            label_origin: self.label_origin,
        })
    }
}
