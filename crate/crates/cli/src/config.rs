//! Run configuration: one JSON document holding the pixel, extraction,
//! Monte-Carlo and baseline settings.

use ipfe_core::circuit::{LatchMode, LoadModel, ThreeTConfig, TuningTransistor};
use ipfe_core::curve::Extraction;
use ipfe_core::device::{MosfetParams, PhotodiodeParams, PtmParams};
use ipfe_core::{Error as CoreError, NormalizationMode, PixelConfig, VariationSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value at `{path}`: {reason}")]
    InvalidValue { path: String, reason: String },
}

impl ConfigError {
    fn invalid(path: &str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidValue {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub sigma: VariationSpec,
}

fn default_samples() -> u64 {
    500
}

fn default_seed() -> u64 {
    42
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            samples: default_samples(),
            seed: default_seed(),
            sigma: VariationSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub vdd: f64,
    pub ptm: PtmParams,
    pub x2: MosfetParams,
    #[serde(default)]
    pub tc: Option<TuningTransistor>,
    #[serde(default = "default_r_on")]
    pub selector_r_on: f64,
    pub load: LoadModel,
    pub pd: PhotodiodeParams,
    #[serde(default = "default_latch")]
    pub latch_mode: LatchMode,
    #[serde(default)]
    pub normalization: NormalizationMode,
    #[serde(default = "default_points")]
    pub curve_points: usize,
    #[serde(default)]
    pub monte_carlo: McSettings,
    #[serde(default = "ThreeTConfig::reference")]
    pub baseline_3t: ThreeTConfig,
}

fn default_r_on() -> f64 {
    500.0
}

fn default_latch() -> LatchMode {
    LatchMode::Latching
}

fn default_points() -> usize {
    256
}

impl RunConfig {
    /// The documented reference configuration.
    pub fn ref_a() -> Self {
        Self::from_pixel(&PixelConfig::ref_a())
    }

    pub fn from_pixel(p: &PixelConfig) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            vdd: p.vdd,
            ptm: p.ptm,
            x2: p.x2,
            tc: p.tc,
            selector_r_on: p.selector_r_on,
            load: p.load,
            pd: p.pd,
            latch_mode: p.latch_mode,
            normalization: NormalizationMode::default(),
            curve_points: default_points(),
            monte_carlo: McSettings::default(),
            baseline_3t: ThreeTConfig::reference(),
        }
    }

    pub fn pixel(&self) -> PixelConfig {
        PixelConfig {
            vdd: self.vdd,
            ptm: self.ptm,
            x2: self.x2,
            tc: self.tc,
            selector_r_on: self.selector_r_on,
            load: self.load,
            pd: self.pd,
            latch_mode: self.latch_mode,
        }
    }

    pub fn set_pixel(&mut self, p: &PixelConfig) {
        self.vdd = p.vdd;
        self.ptm = p.ptm;
        self.x2 = p.x2;
        self.tc = p.tc;
        self.selector_r_on = p.selector_r_on;
        self.load = p.load;
        self.pd = p.pd;
        self.latch_mode = p.latch_mode;
    }

    pub fn extraction(&self) -> Extraction {
        Extraction {
            points: self.curve_points,
            norm: self.normalization,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let core = |e: CoreError| match e {
            CoreError::InvalidParam { field, reason } => ConfigError::InvalidValue { path: field, reason },
            other => ConfigError::invalid("", other.to_string()),
        };
        self.pixel().validate().map_err(core)?;
        self.normalization.validate().map_err(core)?;
        if self.curve_points < 2 {
            return Err(ConfigError::invalid("curve_points", "must be at least 2"));
        }
        self.monte_carlo.sigma.validate().map_err(core)?;
        self.baseline_3t.validate().map_err(core)?;
        Ok(())
    }

    /// Canonical pretty JSON with every default spelled out.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

pub fn parse_config(bytes: &[u8]) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(classify)?;
    cfg.validate()?;
    Ok(cfg)
}

fn classify(err: serde_path_to_error::Error<serde_json::Error>) -> ConfigError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    match inner.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof | serde_json::error::Category::Io => {
            ConfigError::Syntax(inner.to_string())
        }
        serde_json::error::Category::Data => {
            let msg = inner.to_string();
            if let Some(rest) = msg.strip_prefix("unknown field `") {
                let key = rest.split('`').next().unwrap_or_default();
                // the tracked path already ends at the offending key
                if path.ends_with(key) {
                    ConfigError::UnknownKey(path)
                } else if path == "." || path.is_empty() {
                    ConfigError::UnknownKey(key.to_string())
                } else {
                    ConfigError::UnknownKey(format!("{path}.{key}"))
                }
            } else {
                let reason = msg.split(" at line ").next().unwrap_or(&msg).to_string();
                ConfigError::InvalidValue { path, reason }
            }
        }
    }
}
