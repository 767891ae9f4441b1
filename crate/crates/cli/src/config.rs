use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use berthplan_core::geometry::{HarborPolygon, ShipFootprint};
use berthplan_core::planner::{bundled_scenarios, load_scenarios, OfflineOptions, PlanEnvironment, Scenario};
use berthplan_core::sqp::SqpSettings;
use berthplan_core::ShipParams;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GuessKind {
    Warm,
    Cold,
}

/// Run configuration. Relative paths resolve against the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ship: Option<PathBuf>,
    pub polygon: Option<PathBuf>,
    pub footprint: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub warm_start: Option<PathBuf>,
    pub segments: usize,
    pub guess: GuessKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sqp: SqpSettings,
    pub offline: OfflineOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ship: None,
            polygon: None,
            footprint: None,
            scenarios: None,
            warm_start: None,
            segments: 20,
            guess: GuessKind::Warm,
            seed: 0,
            out_dir: PathBuf::from("out"),
            sqp: SqpSettings::default(),
            offline: OfflineOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.ship, &mut cfg.polygon, &mut cfg.footprint, &mut cfg.scenarios, &mut cfg.warm_start]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.segments < 1 {
            bail!("segments must be at least 1");
        }
        for p in [&self.ship, &self.polygon, &self.footprint, &self.scenarios, &self.warm_start].into_iter().flatten() {
            if !p.is_file() {
                bail!("file not found: {}", p.display());
            }
        }
        self.offline.validate()?;
        Ok(())
    }

    pub fn environment(&self) -> anyhow::Result<PlanEnvironment> {
        let mut env = PlanEnvironment::bundled();
        if let Some(p) = &self.ship {
            env.params = ShipParams::load(p)?;
        }
        if let Some(p) = &self.polygon {
            env.polygon = HarborPolygon::load(p)?;
        }
        if let Some(p) = &self.footprint {
            env.footprint = ShipFootprint::load(p, env.params.lpp, env.params.breadth)?;
        } else if self.ship.is_some() {
            env.footprint = ShipFootprint::pentagon(env.params.lpp, env.params.breadth);
        }
        Ok(env)
    }

    pub fn scenarios(&self) -> anyhow::Result<Vec<Scenario>> {
        Ok(match &self.scenarios {
            Some(p) => load_scenarios(p)?,
            None => bundled_scenarios(),
        })
    }

    pub fn scenario(&self, name: &str) -> anyhow::Result<Scenario> {
        let all = self.scenarios()?;
        match all.iter().find(|s| s.name == name) {
            Some(s) => Ok(s.clone()),
            None => {
                let known: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
                bail!("unknown scenario '{name}'; known scenarios: {}", known.join(", "))
            }
        }
    }

    pub fn offline_options(&self) -> OfflineOptions {
        let mut o = self.offline;
        o.cmaes.seed = self.seed;
        o
    }
}
