//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use ganvert_core::decoder::seeded_weights;
use ganvert_core::{
    AdamConfig, Architecture, DecoderWeights, FluidParams, GridGeometry, NoiseModel, PropertyTransform, Scenario,
    Schedule, SimSetup, SolverOptions, WellSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 128×64 grid, 60 report steps, six-block decoder.
    #[default]
    Paper,
    /// 32×16 grid, 20 report steps, four-block decoder.
    Desk,
}

impl Profile {
    pub fn setup(self) -> SimSetup {
        match self {
            Profile::Paper => SimSetup::paper(),
            Profile::Desk => SimSetup::desk(),
        }
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Profile::Paper => Architecture::Paper,
            Profile::Desk => Architecture::Desk,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Days.
    pub total_time: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// m³/day; defaults to 3 % of the injection rate.
    pub sigma_q: Option<f64>,
    /// bar; defaults to 5 % of the reference pressure.
    pub sigma_p: Option<f64>,
}

/// Reference case used to synthesise observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Seed of the prior latent decoded into the reference model.
    pub latent_seed: u64,
    pub noise_seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { latent_seed: 999_999, noise_seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub profile: Profile,
    /// Replaces the profile geometry when present.
    pub geometry: Option<GridGeometry>,
    pub fluid: FluidParams,
    /// Replaces the profile well layout when present.
    pub wells: Option<WellSpec>,
    pub schedule: ScheduleConfig,
    pub solver: SolverOptions,
    pub noise: NoiseConfig,
    pub adam: AdamConfig,
    pub transform: PropertyTransform,
    pub scenario: u8,
    pub ensemble_size: usize,
    /// Explicit member seeds; `0..ensemble_size` when empty.
    pub seeds: Vec<u64>,
    /// GWT1 generator weights; a seeded decoder is used when absent.
    pub weight_path: Option<PathBuf>,
    pub decoder_seed: u64,
    pub reference: ReferenceConfig,
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Paper,
            geometry: None,
            fluid: FluidParams::default(),
            wells: None,
            schedule: ScheduleConfig::default(),
            solver: SolverOptions::default(),
            noise: NoiseConfig::default(),
            adam: AdamConfig::default(),
            transform: PropertyTransform::default(),
            scenario: 4,
            ensemble_size: 100,
            seeds: Vec::new(),
            weight_path: None,
            decoder_seed: 0,
            reference: ReferenceConfig::default(),
            output_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

/// Parses TOML text; unknown keys and type errors are reported with their location.
pub fn parse_config(text: &str) -> Result<AppConfig> {
    let cfg: AppConfig = toml::from_str(text).context("invalid configuration")?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<AppConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

impl AppConfig {
    pub fn setup(&self) -> SimSetup {
        let mut s = self.profile.setup();
        if let Some(g) = self.geometry {
            s.geometry = g;
            s.wells = WellSpec::for_grid(g.nx, g.nz);
        }
        if let Some(w) = self.wells {
            s.wells = w;
        }
        s.fluid = self.fluid;
        s.solver = self.solver;
        let total = self.schedule.total_time.unwrap_or(s.schedule.total_time);
        let steps = self.schedule.steps.unwrap_or(s.schedule.n_steps());
        s.schedule = Schedule::uniform(total, steps);
        s
    }

    pub fn noise_model(&self) -> NoiseModel {
        let d = NoiseModel::from_setup(&self.setup());
        NoiseModel { sigma_q: self.noise.sigma_q.unwrap_or(d.sigma_q), sigma_p: self.noise.sigma_p.unwrap_or(d.sigma_p) }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::from_number(self.scenario).with_context(|| format!("scenario must be 1 to 4, not {}", self.scenario))
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.ensemble_size as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Every violated invariant, empty when the configuration is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.setup().violations();
        if let Err(e) = self.noise_model().validate() {
            v.push(e.to_string());
        }
        if let Err(e) = self.adam.validate() {
            v.push(e.to_string());
        }
        if let Err(e) = self.transform.validate() {
            v.push(e.to_string());
        }
        if Scenario::from_number(self.scenario).is_none() {
            v.push(format!("scenario must be 1 to 4, not {}", self.scenario));
        }
        let seeds = self.member_seeds();
        if seeds.is_empty() {
            v.push("ensemble is empty".into());
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            v.push("seeds must be unique".into());
        }
        if let Some(p) = &self.weight_path {
            if !p.is_file() {
                v.push(format!("weight file {} does not exist", p.display()));
            }
        }
        if self.threads == Some(0) {
            v.push("threads must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if !v.is_empty() {
            bail!("invalid configuration:\n  - {}", v.join("\n  - "));
        }
        Ok(())
    }

    pub fn decoder(&self) -> Result<DecoderWeights> {
        match &self.weight_path {
            Some(p) => DecoderWeights::load_file(p).with_context(|| format!("loading weights {}", p.display())),
            None => {
                let a = self.profile.architecture();
                Ok(seeded_weights(a.filters(), a.latent_channels(), &self.transform, self.decoder_seed))
            }
        }
    }
}
