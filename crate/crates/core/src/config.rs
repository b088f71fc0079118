//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Unknown keys are an
//! error so typos do not silently fall back to defaults.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `seed` | master seed | 0 |
//! | `connectivity` | 4 or 8 | 4 |
//! | `tau` | confidence threshold | 0.968 |
//! | `selection_ratio` | share of source instances pasted | 0.5 |
//! | `strategy` | `himix` or `classmix` | himix |
//! | `brightness`, `contrast`, `saturation`, `hue` | jitter magnitudes | 0.2, 0.2, 0.2, 10 |
//! | `noise`, `sharpness` | mock segmenter | 0.1, 6 |
//! | `height`, `width` | scene size | 64, 64 |
//! | `source_skew`, `target_skew` | urban share of each domain | 0, 1 |
//! | `patch_density`, `road_density`, `water_density`, `field_density`, `building_density` | scene elements | 3, 1, 0.5, 1, 10 |
//! | `trials` | bench trial count | 500 |

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::augment::PhotometricRanges;
use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::himix::MixConfig;
use crate::instances::Connectivity;
use crate::synth::{EpisodeSettings, MixStrategy, MockSegmenterConfig, SceneConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: MixStrategy,
    pub trials: usize,
    pub mix: MixConfig,
    pub fusion: FusionConfig,
    pub photometric: PhotometricRanges,
    pub segmenter: MockSegmenterConfig,
    pub source: SceneConfig,
    pub target: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            strategy: MixStrategy::Himix,
            trials: 500,
            mix: MixConfig::default(),
            fusion: FusionConfig::default(),
            photometric: PhotometricRanges::default(),
            segmenter: MockSegmenterConfig::default(),
            source: SceneConfig::rural(),
            target: SceneConfig::urban(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Config {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key. Scene size keys apply to both domains.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "connectivity" => self.mix.connectivity = value.parse()?,
            "tau" => self.fusion = FusionConfig::new(parse(key, value)?)?,
            "selection_ratio" => self.mix.selection_ratio = parse(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "trials" => self.trials = parse(key, value)?,
            "brightness" => self.photometric.brightness = parse(key, value)?,
            "contrast" => self.photometric.contrast = parse(key, value)?,
            "saturation" => self.photometric.saturation = parse(key, value)?,
            "hue" => self.photometric.hue = parse(key, value)?,
            "noise" => self.segmenter.noise = parse(key, value)?,
            "sharpness" => self.segmenter.sharpness = parse(key, value)?,
            "height" => {
                let v = parse(key, value)?;
                self.source.height = v;
                self.target.height = v;
            }
            "width" => {
                let v = parse(key, value)?;
                self.source.width = v;
                self.target.width = v;
            }
            "source_skew" => self.source.skew = parse(key, value)?,
            "target_skew" => self.target.skew = parse(key, value)?,
            "patch_density" | "road_density" | "water_density" | "field_density"
            | "building_density" => {
                let v: f64 = parse(key, value)?;
                for scene in [&mut self.source, &mut self.target] {
                    match key {
                        "patch_density" => scene.patch_density = v,
                        "road_density" => scene.road_density = v,
                        "water_density" => scene.water_density = v,
                        "field_density" => scene.field_density = v,
                        _ => scene.building_density = v,
                    }
                }
            }
            other => {
                return Err(Error::InvalidParameter(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = self.mix.selection_ratio;
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "selection_ratio must be in (0, 1], got {ratio}"
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        FusionConfig::new(self.fusion.tau)?;
        self.photometric.validate()?;
        self.segmenter.validate(crate::synth::NUM_CLASSES as usize)?;
        self.source.validate()?;
        self.target.validate()
    }

    pub fn episode_settings(&self) -> EpisodeSettings {
        EpisodeSettings {
            mix: self.mix,
            fusion: self.fusion,
            photometric: self.photometric,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            source: self.source.clone(),
            target: self.target.clone(),
            segmenter: self.segmenter.clone(),
            settings: self.episode_settings(),
        }
    }

    pub fn connectivity(&self) -> Connectivity {
        self.mix.connectivity
    }
}
