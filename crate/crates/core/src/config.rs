//! Run configuration: which experiment, which seeds, where outputs go.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{experiment_a, experiment_b, experiment_c, experiment_custom, CustomConfig};
use crate::simulators::{HawkesConfig, TextureConfig, VideoConfig};
use crate::trace::{render_summary, trace_file_name, write_atomic, ExperimentBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    A,
    B,
    C,
    Custom,
}

impl ExperimentId {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::A => "a",
            ExperimentId::B => "b",
            ExperimentId::C => "c",
            ExperimentId::Custom => "custom",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(ExperimentId::A),
            "b" => Ok(ExperimentId::B),
            "c" => Ok(ExperimentId::C),
            "custom" => Ok(ExperimentId::Custom),
            other => Err(Error::config(format!("experiment: unknown id `{other}` (expected a, b, c or custom)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Keep every `stride`-th prediction; `None` keeps none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default)]
    pub texture: TextureConfig,
    #[serde(default)]
    pub video: VideoConfig,
    #[serde(default)]
    pub hawkes: HawkesConfig,
    #[serde(default)]
    pub custom: CustomConfig,
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            seeds: vec![1],
            out_dir: PathBuf::from("out"),
            workers: 1,
            stride: None,
            texture: TextureConfig::default(),
            video: VideoConfig::default(),
            hawkes: HawkesConfig::default(),
            custom: CustomConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds: at least one seed is required"));
        }
        if let Some(s) = self.seeds.iter().find(|s| **s > i64::MAX as u64) {
            return Err(Error::config(format!("seeds: {s} exceeds {}", i64::MAX)));
        }
        if self.workers == 0 {
            return Err(Error::config("workers: must be >= 1"));
        }
        if self.stride == Some(0) {
            return Err(Error::config("stride: must be >= 1"));
        }
        match self.experiment {
            ExperimentId::A => self.texture.validate(),
            ExperimentId::B => {
                self.video.validate()?;
                if self.video.noise_var <= 0.0 {
                    return Err(Error::config("video.noise_var: the loss needs noise_var > 0"));
                }
                Ok(())
            }
            ExperimentId::C => self.hawkes.validate(),
            ExperimentId::Custom => self.custom.validate(),
        }
    }

    /// Rounds of the selected experiment.
    pub fn horizon(&self) -> usize {
        match self.experiment {
            ExperimentId::A => self.texture.horizon,
            ExperimentId::B => self.video.horizon,
            ExperimentId::C => self.hawkes.horizon,
            ExperimentId::Custom => self.custom.horizon,
        }
    }

    /// Sets the round count. Texture anomaly intervals past the new horizon
    /// are dropped and a straddling one is cut at it.
    pub fn set_horizon(&mut self, horizon: usize) {
        match self.experiment {
            ExperimentId::A => {
                self.texture.horizon = horizon;
                self.texture.anomalies = self
                    .texture
                    .anomalies
                    .iter()
                    .filter(|iv| iv[0] <= horizon)
                    .map(|iv| [iv[0], iv[1].min(horizon)])
                    .collect();
            }
            ExperimentId::B => self.video.horizon = horizon,
            ExperimentId::C => self.hawkes.horizon = horizon,
            ExperimentId::Custom => self.custom.horizon = horizon,
        }
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot render config: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Runs the selected experiment on one seed.
    pub fn run_seed(&self, seed: u64) -> Result<ExperimentBundle> {
        match self.experiment {
            ExperimentId::A => experiment_a(&self.texture, seed, self.stride),
            ExperimentId::B => experiment_b(&self.video, seed, self.stride),
            ExperimentId::C => experiment_c(&self.hawkes, seed, self.stride),
            ExperimentId::Custom => experiment_custom(&self.custom, seed, self.stride),
        }
    }
}

/// Writes one trace file per algorithm (and a prediction file when
/// predictions were kept). Returns the written paths.
pub fn write_bundle(out_dir: &Path, bundle: &ExperimentBundle) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for t in &bundle.traces {
        let path = out_dir.join(trace_file_name(&bundle.experiment, bundle.seed, &t.name));
        write_atomic(&path, &t.to_csv())?;
        written.push(path);
        if let Some(csv) = t.predictions_csv() {
            let path = out_dir.join(format!("{}_seed{}_{}.predictions", bundle.experiment, bundle.seed, t.name));
            write_atomic(&path, &csv)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes the run summary `<experiment>_summary.txt`.
pub fn write_summary(out_dir: &Path, experiment: &str, bundles: &[ExperimentBundle]) -> Result<PathBuf> {
    let path = out_dir.join(format!("{experiment}_summary.txt"));
    write_atomic(&path, &render_summary(experiment, bundles))?;
    Ok(path)
}
